//! Seeded fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctxfuse_core::audio::Waveform;
use ctxfuse_core::calibration::PredictionSet;
use ctxfuse_core::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn points(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    Matrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

/// Binary predictions with labels drawn from the predicted probabilities.
pub fn predictions(n: usize, seed: u64) -> PredictionSet {
    let mut r = rng(seed);
    let p1: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
    let labels = p1.iter().map(|p| usize::from(r.random_range(0.0..1.0) < *p)).collect();
    let probs = Matrix::from_fn(n, 2, |i, j| if j == 1 { p1[i] } else { 1.0 - p1[i] });
    PredictionSet::new(probs, labels).expect("probabilities are valid")
}

/// Two seconds of a two-tone signal.
pub fn waveform(sample_rate: u32) -> Waveform {
    let sr = sample_rate as f64;
    let samples = (0..2 * sample_rate as usize)
        .map(|i| {
            let t = i as f64 / sr;
            (2.0 * std::f64::consts::PI * 440.0 * t).sin() + 0.3 * (2.0 * std::f64::consts::PI * 1250.0 * t).sin()
        })
        .collect();
    Waveform::new(samples, sample_rate).expect("nonempty signal")
}
