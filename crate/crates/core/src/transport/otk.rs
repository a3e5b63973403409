//! OT-kernel embedding: pools a length-`T` sequence against `n` references
//! through an entropic transport plan, producing a length-`n` sequence.
//!
//! The Sinkhorn iterations are unrolled on the tape so gradients reach both
//! the input sequence and the references. Ground cost is the squared
//! Euclidean distance divided by the feature dimension, which keeps `eps`
//! meaningful across feature widths.

use rand::seq::index::sample;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::diff::{Matrix, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OtkConfig {
    pub eps: f64,
    /// Unrolled Sinkhorn iterations.
    pub iterations: usize,
    /// Row-marginal tolerance used for the convergence flag.
    pub tol: f64,
}

impl Default for OtkConfig {
    fn default() -> Self {
        Self {
            eps: 0.5,
            iterations: 30,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OtkOutput<'t> {
    /// `n x D`; row `i` is the mass-renormalized average of the input rows
    /// transported to reference `i`.
    pub output: Var<'t>,
    /// `T x n` entropic plan with uniform marginals.
    pub plan: Var<'t>,
    pub violation: f64,
    pub converged: bool,
}

pub fn otk_embed<'t>(y: Var<'t>, references: Var<'t>, cfg: &OtkConfig) -> Result<OtkOutput<'t>> {
    if !(cfg.eps > 0.0) {
        return Err(Error::Parameter(format!("otk eps must be positive, got {}", cfg.eps)));
    }
    if cfg.iterations == 0 {
        return Err(Error::Parameter("otk needs at least one sinkhorn iteration".into()));
    }
    if y.cols() != references.cols() {
        return Err(Error::dim("otk_embed", y.shape(), references.shape()));
    }
    let tape = y.tape();
    let (t, d) = y.shape();
    let n = references.rows();
    let ones = tape.constant(Matrix::ones(d, 1));
    let y_sq = y.mul(y)?.matmul(ones)?;
    let z_sq = references.mul(references)?.matmul(ones)?.t();
    let cost = y
        .matmul(references.t())?
        .scale(-2.0)
        .add_col(y_sq)?
        .add_row(z_sq)?
        .scale(1.0 / d as f64);
    let kernel = cost.scale(-1.0 / cfg.eps);

    let log_a = -(t as f64).ln();
    let log_b = -(n as f64).ln();
    let mut beta = tape.constant(Matrix::zeros(1, n));
    let mut alpha = tape.constant(Matrix::zeros(t, 1));
    for _ in 0..cfg.iterations {
        alpha = kernel.add_row(beta)?.log_sum_exp_rows().scale(-1.0).add_scalar(log_a);
        beta = kernel
            .add_col(alpha)?
            .t()
            .log_sum_exp_rows()
            .t()
            .scale(-1.0)
            .add_scalar(log_b);
    }
    let plan = kernel.add_col(alpha)?.add_row(beta)?.exp();
    let violation = plan.with_value(|p| {
        p.row_sums()
            .iter()
            .fold(0.0, |m: f64, s| m.max((s - 1.0 / t as f64).abs()))
    });
    let output = plan.t().matmul(y)?.scale(n as f64);
    Ok(OtkOutput {
        output,
        plan,
        violation,
        converged: violation < cfg.tol,
    })
}

/// Picks `n` reference rows from the given sequences (typically the first
/// training batch), without replacement when enough rows exist.
pub fn init_references(sequences: &[&Matrix], n: usize, rng: &mut dyn RngCore) -> Result<Matrix> {
    let first = sequences
        .first()
        .ok_or_else(|| Error::Input("no sequences to initialize references from".into()))?;
    if n == 0 {
        return Err(Error::Parameter("reference count must be positive".into()));
    }
    let pool = Matrix::concat_rows(sequences)?;
    debug_assert_eq!(pool.cols(), first.cols());
    let idx: Vec<usize> = if pool.rows() >= n {
        sample(rng, pool.rows(), n).into_vec()
    } else {
        (0..n).map(|_| (rng.next_u64() % pool.rows() as u64) as usize).collect()
    };
    Ok(pool.select_rows(&idx))
}
