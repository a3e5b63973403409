//! Context-aware self-attention, gated self-attention, optimal-transport
//! alignment and two multimodal fusion heads, together with label smoothing,
//! calibration metrics, the almost-stochastic-order significance test and
//! log-mel feature extraction.

// `!(x > 0.0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod diff;
pub mod error;

pub use diff::{Matrix, Mode, ParamId, ParamStore, Tape, Var};
pub use error::{Error, Result};
pub mod context;
pub mod gated;
pub mod transport;
pub mod fusion;
pub mod calibration;
pub mod significance;
pub mod audio;
pub mod pipeline;
