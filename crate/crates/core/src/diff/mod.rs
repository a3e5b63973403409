//! Dense matrices, tape-based reverse-mode differentiation and gradient checks.

mod gradcheck;
mod matrix;
mod param;
mod tape;

use rand::{Rng, RngCore};

pub use gradcheck::{
    all_passed, analytic_gradients, compare_gradients, grad_check, numeric_gradients, relative_error,
    selected_entries, worst, EntryError, GradCheckConfig, GradCheckReport,
};
pub use matrix::Matrix;
pub use param::{glorot_uniform, Bound, ParamId, ParamStore, Parameter};
pub use tape::{concat_cols, concat_rows, normalize_rows, sigmoid, Gradients, Tape, Var, LAYER_NORM_EPS};

use crate::error::{Error, Result};

/// Forward-pass mode. Training mode carries the RNG used for dropout masks.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Inverted dropout: in training, zero each entry with probability `rate` and
/// scale survivors by `1 / (1 - rate)`. Identity in eval mode.
pub fn dropout<'t>(x: Var<'t>, rate: f64, mode: &mut Mode<'_>) -> Result<Var<'t>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    match mode {
        Mode::Train(rng) if rate > 0.0 => {
            let (r, c) = x.shape();
            let keep = 1.0 / (1.0 - rate);
            let mask = Matrix::from_fn(r, c, |_, _| if rng.random::<f64>() < rate { 0.0 } else { keep });
            x.mask_mul(mask)
        }
        _ => Ok(x),
    }
}
