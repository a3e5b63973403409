//! Optimal transport: ground costs, exact EMD, entropic Sinkhorn,
//! barycentric domain-adaptation maps and the OT-kernel sequence embedding.

mod cost;
mod emd;
mod otk;
mod sinkhorn;

pub use cost::{cost_matrix, CostMatrix, Metric};
pub use emd::emd_exact;
pub use otk::{init_references, otk_embed, OtkConfig, OtkOutput};
pub use sinkhorn::{sinkhorn, SinkhornResult};

use crate::diff::{Matrix, Var};
use crate::error::{Error, Result};

/// Tolerance on the total mass of a marginal.
pub const MARGINAL_SUM_TOL: f64 = 1e-9;

/// A transport plan together with the marginals it was solved for.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub plan: Matrix,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
}

impl Coupling {
    pub fn cost(&self, cost: &CostMatrix) -> f64 {
        self.plan
            .as_slice()
            .iter()
            .zip(cost.values().as_slice())
            .map(|(p, c)| p * c)
            .sum()
    }

    /// Max-norm deviation of the plan's row and column sums from the marginals.
    pub fn marginal_violation(&self) -> f64 {
        let rows = self
            .plan
            .row_sums()
            .iter()
            .zip(&self.row_marginal)
            .fold(0.0, |m: f64, (s, a)| m.max((s - a).abs()));
        let cols = self
            .plan
            .col_sums()
            .iter()
            .zip(&self.col_marginal)
            .fold(0.0, |m: f64, (s, b)| m.max((s - b).abs()));
        rows.max(cols)
    }
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub(crate) fn check_marginal(which: &str, w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::Parameter(format!("{which} marginal is empty")));
    }
    if let Some(v) = w.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Input(format!("{which} marginal has invalid mass {v}")));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > MARGINAL_SUM_TOL {
        return Err(Error::Input(format!("{which} marginal sums to {total}, expected 1")));
    }
    Ok(())
}

/// Row-normalized plan `diag(1/a)·π`: row `i` holds the weights that
/// average target points into the image of source point `i`.
pub fn barycentric_weights(coupling: &Coupling) -> Result<Matrix> {
    let plan = &coupling.plan;
    if coupling.row_marginal.len() != plan.rows() {
        return Err(Error::Input("row marginal length does not match plan".into()));
    }
    if let Some(i) = coupling.row_marginal.iter().position(|a| *a <= 0.0) {
        return Err(Error::Input(format!("source point {i} has zero mass")));
    }
    Ok(Matrix::from_fn(plan.rows(), plan.cols(), |i, j| plan[(i, j)] / coupling.row_marginal[i]))
}

/// Transported source row `i` is `(1/a_i) Σ_j π_ij t_j`.
pub fn barycentric_map(coupling: &Coupling, target_points: &Matrix) -> Result<Matrix> {
    if coupling.plan.cols() != target_points.rows() {
        return Err(Error::dim("barycentric_map", coupling.plan.shape(), target_points.shape()));
    }
    barycentric_weights(coupling)?.matmul(target_points)
}

/// Uniform-marginal exact transport of `src` onto `tgt`, returned as the
/// barycentric image of each source row (so it has `src.rows()` rows and
/// lives in the target's domain).
pub fn ot_adapt(src: &Matrix, tgt: &Matrix) -> Result<Matrix> {
    let coupling = ot_adapt_plan(src, tgt)?;
    barycentric_map(&coupling, tgt)
}

pub fn ot_adapt_plan(src: &Matrix, tgt: &Matrix) -> Result<Coupling> {
    let cost = cost_matrix(src, tgt, Metric::SquaredEuclidean)?;
    emd_exact(&uniform(src.rows()), &uniform(tgt.rows()), &cost)
}

/// Differentiable form of [`ot_adapt`]. The plan is solved from the current
/// values and held constant; gradients flow into `tgt` through the
/// barycentric averaging only.
pub fn ot_adapt_var<'t>(src: Var<'t>, tgt: Var<'t>) -> Result<Var<'t>> {
    let coupling = src.with_value(|s| tgt.with_value(|t| ot_adapt_plan(s, t)))?;
    let weights = barycentric_weights(&coupling)?;
    src.tape().constant(weights).matmul(tgt)
}
