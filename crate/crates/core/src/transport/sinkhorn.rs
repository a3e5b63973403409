use super::{check_marginal, Coupling, CostMatrix};
use crate::diff::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub coupling: Coupling,
    pub iterations: usize,
    /// Max-norm row-marginal violation after the final column update.
    pub violation: f64,
    pub converged: bool,
}

impl SinkhornResult {
    /// The coupling, or a numerical error if the tolerance was not reached.
    pub fn into_converged(self) -> Result<Coupling> {
        if self.converged {
            Ok(self.coupling)
        } else {
            Err(Error::Numerical(format!(
                "sinkhorn stopped after {} iterations with marginal violation {:.3e}",
                self.iterations, self.violation
            )))
        }
    }
}

/// Entropy-regularized transport, iterated in the log domain.
///
/// Alternates exact row and column scalings of `exp(-C / eps)`; stops once
/// the row marginals are within `tol` (column marginals are exact after every
/// iteration) or after `max_iters`, in which case the result is flagged.
pub fn sinkhorn(a: &[f64], b: &[f64], cost: &CostMatrix, eps: f64, max_iters: usize, tol: f64) -> Result<SinkhornResult> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("sinkhorn eps must be positive, got {eps}")));
    }
    if max_iters == 0 {
        return Err(Error::Parameter("sinkhorn needs at least one iteration".into()));
    }
    let (n, m) = cost.shape();
    if a.len() != n || b.len() != m {
        return Err(Error::Parameter(format!(
            "marginal lengths ({}, {}) do not match cost shape {n}x{m}",
            a.len(),
            b.len()
        )));
    }
    check_marginal("source", a)?;
    check_marginal("target", b)?;

    let kernel = cost.values().scale(-1.0 / eps);
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; m];
    let mut scratch = vec![0.0; n.max(m)];
    let mut violation = f64::INFINITY;
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        for i in 0..n {
            if a[i] == 0.0 {
                alpha[i] = f64::NEG_INFINITY;
                continue;
            }
            for j in 0..m {
                scratch[j] = kernel[(i, j)] + beta[j];
            }
            alpha[i] = log_a[i] - lse(&scratch[..m]);
        }
        for j in 0..m {
            if b[j] == 0.0 {
                beta[j] = f64::NEG_INFINITY;
                continue;
            }
            for i in 0..n {
                scratch[i] = kernel[(i, j)] + alpha[i];
            }
            beta[j] = log_b[j] - lse(&scratch[..n]);
        }
        violation = (0..n)
            .map(|i| {
                let s: f64 = (0..m).map(|j| (kernel[(i, j)] + alpha[i] + beta[j]).exp()).sum();
                (s - a[i]).abs()
            })
            .fold(0.0, f64::max);
        if !violation.is_finite() {
            return Err(Error::Numerical("sinkhorn produced a non-finite plan".into()));
        }
        if violation < tol {
            break;
        }
    }
    let plan = Matrix::from_fn(n, m, |i, j| (kernel[(i, j)] + alpha[i] + beta[j]).exp());
    Ok(SinkhornResult {
        coupling: Coupling {
            plan,
            row_marginal: a.to_vec(),
            col_marginal: b.to_vec(),
        },
        iterations,
        violation,
        converged: violation < tol,
    })
}

fn lse(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_two_by_two() {
        let c = CostMatrix::new(Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap()).unwrap();
        let r = sinkhorn(&[0.5, 0.5], &[0.5, 0.5], &c, 0.5, 1000, 1e-12).unwrap();
        assert!(r.converged);
        let p = &r.coupling.plan;
        assert!((p[(0, 0)] - p[(1, 1)]).abs() < 1e-12);
        assert!((p[(0, 1)] - p[(1, 0)]).abs() < 1e-12);
        assert!(p[(0, 0)] > p[(0, 1)]);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let c = CostMatrix::new(Matrix::from_rows(&[[0.0, 5.0, 1.0], [2.0, 0.0, 3.0]]).unwrap()).unwrap();
        let r = sinkhorn(&[0.5, 0.5], &[0.2, 0.3, 0.5], &c, 1e-3, 1, 1e-14).unwrap();
        assert!(!r.converged);
        assert!(r.into_converged().is_err());
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let c = CostMatrix::new(Matrix::zeros(1, 1)).unwrap();
        assert!(sinkhorn(&[1.0], &[1.0], &c, 0.0, 10, 1e-9).is_err());
    }
}
