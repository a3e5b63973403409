//! Two-modality synthetic classification task.
//!
//! Each sample has a text sequence `X` (`n x d`) and an image sequence `Y`
//! (`T x d`). With class sign `s = ±1`, separation `c`, noise `σ` and
//! correlation `ρ`, a per-sample latent `z = s·(cσ/2)·μ_shared + σ·N(0, I)`
//! is drawn once and every row of modality `m` is
//! `(1 - ρ)·s·(cσ/2)·μ_m + ρ·z + σ·ε`. The directions `μ` are random unit
//! vectors fixed by the task seed.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::SyntheticTaskConfig;
use crate::diff::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Matrix,
    pub y: Matrix,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

fn unit_vector(d: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

struct Directions {
    shared: Vec<f64>,
    text: Vec<f64>,
    image: Vec<f64>,
}

fn balanced_labels(count: usize, rng: &mut dyn RngCore) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..count).map(|i| i % 2).collect();
    labels.shuffle(rng);
    labels
}

fn draw_sample(cfg: &SyntheticTaskConfig, dirs: &Directions, label: usize, rng: &mut dyn RngCore) -> Sample {
    let sign = if label == 1 { 1.0 } else { -1.0 };
    let sigma = cfg.noise_std;
    let amp = sign * cfg.class_separation * sigma / 2.0;
    let rho = cfg.cross_modal_correlation;
    let latent: Vec<f64> = dirs
        .shared
        .iter()
        .map(|m| amp * m + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut rows = |len: usize, mu: &[f64]| {
        let data: Vec<f64> = (0..len)
            .flat_map(|_| (0..cfg.d).map(|j| (1.0 - rho) * amp * mu[j] + rho * latent[j]).collect::<Vec<_>>())
            .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Matrix::from_vec(len, cfg.d, data).expect("nonempty sequence")
    };
    let x = rows(cfg.n, &dirs.text);
    let y = rows(cfg.t, &dirs.image);
    Sample { x, y, label }
}

/// Balanced splits, bit-identical for a given config.
pub fn generate_task(cfg: &SyntheticTaskConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dirs = Directions {
        shared: unit_vector(cfg.d, &mut rng),
        text: unit_vector(cfg.d, &mut rng),
        image: unit_vector(cfg.d, &mut rng),
    };
    let mut split = |count: usize| -> Vec<Sample> {
        balanced_labels(count, &mut rng)
            .into_iter()
            .map(|label| draw_sample(cfg, &dirs, label, &mut rng))
            .collect()
    };
    let train = split(cfg.train_size);
    let val = split(cfg.val_size);
    let test = split(cfg.test_size);
    Ok(Dataset { train, val, test })
}

/// Splits `samples` into (kept, held-out) with `fraction` of each class
/// held out, rounding to the nearest count.
pub fn stratified_split(samples: Vec<Sample>, fraction: f64, rng: &mut dyn RngCore) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Parameter(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let classes = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let mut by_class: Vec<Vec<Sample>> = vec![Vec::new(); classes];
    for s in samples {
        by_class[s.label].push(s);
    }
    let (mut kept, mut held) = (Vec::new(), Vec::new());
    for mut group in by_class {
        group.shuffle(rng);
        let n_held = (group.len() as f64 * fraction).round() as usize;
        let rest = group.split_off(n_held);
        held.extend(group);
        kept.extend(rest);
    }
    if kept.is_empty() || held.is_empty() {
        return Err(Error::Input("split leaves an empty partition".into()));
    }
    kept.shuffle(rng);
    held.shuffle(rng);
    Ok((kept, held))
}
