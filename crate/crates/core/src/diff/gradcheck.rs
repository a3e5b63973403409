//! Finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::matrix::Matrix;
use super::param::{Bound, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Maximum tolerated relative error.
    pub tolerance: f64,
    /// Check at most this many entries per parameter, chosen by `seed`.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tolerance: 1e-4,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EntryError {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub entries: Vec<EntryError>,
    pub passed: bool,
}

/// `|a - n| / max(1, |a|, |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn eval_loss<F>(store: &ParamStore, loss_fn: &F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let loss = loss_fn(&tape, &bound)?;
    if loss.shape() != (1, 1) {
        return Err(Error::dim("grad_check loss", loss.shape(), (1, 1)));
    }
    Ok(loss.scalar())
}

/// Loss value and reverse-mode gradient of every parameter.
pub fn analytic_gradients<F>(store: &ParamStore, loss_fn: &F) -> Result<(f64, Vec<Matrix>)>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let loss = loss_fn(&tape, &bound)?;
    let grads = tape.backward(loss)?;
    let out = bound.vars().iter().map(|v| grads.get_or_zeros(*v)).collect();
    Ok((loss.scalar(), out))
}

/// Entry indices to check for each parameter.
pub fn selected_entries(store: &ParamStore, cfg: &GradCheckConfig) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    store
        .iter()
        .map(|p| {
            let n = p.value.len();
            match cfg.max_entries {
                Some(k) if k < n => {
                    let mut idx = sample(&mut rng, n, k).into_vec();
                    idx.sort_unstable();
                    idx
                }
                _ => (0..n).collect(),
            }
        })
        .collect()
}

/// Central differences at the selected entries. Other entries are left zero.
pub fn numeric_gradients<F>(store: &mut ParamStore, loss_fn: &F, eps: f64, entries: &[Vec<usize>]) -> Result<Vec<Matrix>>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    let ids: Vec<_> = store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for (id, idx) in ids.into_iter().zip(entries) {
        let (r, c) = store.get(id).value.shape();
        let mut g = Matrix::zeros(r, c);
        for &k in idx {
            let orig = store.get(id).value.as_slice()[k];
            store.get_mut(id).value.as_mut_slice()[k] = orig + eps;
            let plus = eval_loss(store, loss_fn);
            store.get_mut(id).value.as_mut_slice()[k] = orig - eps;
            let minus = eval_loss(store, loss_fn);
            store.get_mut(id).value.as_mut_slice()[k] = orig;
            g.as_mut_slice()[k] = (plus? - minus?) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

pub fn compare_gradients(
    store: &ParamStore,
    analytic: &[Matrix],
    numeric: &[Matrix],
    entries: &[Vec<usize>],
    tolerance: f64,
) -> Vec<GradCheckReport> {
    store
        .iter()
        .zip(analytic.iter().zip(numeric))
        .zip(entries)
        .map(|((p, (a, n)), idx)| {
            let errs: Vec<EntryError> = idx
                .iter()
                .map(|&k| {
                    let (av, nv) = (a.as_slice()[k], n.as_slice()[k]);
                    EntryError {
                        index: k,
                        analytic: av,
                        numeric: nv,
                        relative: relative_error(av, nv),
                    }
                })
                .collect();
            let max_rel_error = errs.iter().fold(0.0, |m: f64, e| m.max(e.relative));
            GradCheckReport {
                name: p.name.clone(),
                max_rel_error,
                passed: max_rel_error < tolerance,
                entries: errs,
            }
        })
        .collect()
}

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// for every parameter of `store`.
///
/// `loss_fn` must be deterministic: it is evaluated twice up front and a
/// differing result is reported as a contract violation.
pub fn grad_check<F>(store: &mut ParamStore, cfg: &GradCheckConfig, loss_fn: F) -> Result<Vec<GradCheckReport>>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    if !(cfg.eps > 0.0) {
        return Err(Error::Parameter(format!("grad_check eps must be positive, got {}", cfg.eps)));
    }
    let (loss, analytic) = analytic_gradients(store, &loss_fn)?;
    let again = eval_loss(store, &loss_fn)?;
    if loss.to_bits() != again.to_bits() {
        return Err(Error::Contract(format!(
            "loss is not deterministic: {loss} then {again}"
        )));
    }
    let entries = selected_entries(store, cfg);
    let numeric = numeric_gradients(store, &loss_fn, cfg.eps, &entries)?;
    Ok(compare_gradients(store, &analytic, &numeric, &entries, cfg.tolerance))
}

pub fn all_passed(reports: &[GradCheckReport]) -> bool {
    reports.iter().all(|r| r.passed)
}

pub fn worst(reports: &[GradCheckReport]) -> f64 {
    reports.iter().fold(0.0, |m, r| m.max(r.max_rel_error))
}
