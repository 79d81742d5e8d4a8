//! Minimal reverse-mode differentiation used by the model.

mod params;
mod tape;

pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{ConvPadding, Segments, Tape, Var};
pub(crate) use tape::{log_sum_exp, softmax_rows};
