//! Neural primitives used by the enhancement blocks: convolutions
//! (plain, transposed, dilated), the gated linear unit, normalization,
//! a forward LSTM, and dual-axis multi-head self-attention.
//!
//! Every layer here is a thin wrapper that wires parameters from a
//! [`ParamStore`] into tape primitives, so the whole set inherits the
//! finite-difference guarantees of the autodiff substrate.

mod attention;
mod conv;
mod lstm;
mod norm;
mod params;

pub use attention::{AttnAxis, AttnScale, Mhsa, MhsaConfig};
pub use conv::{Conv2dLayer, ConvT2dLayer};
pub use lstm::{Lstm, LstmSpec};
pub use norm::{BatchNorm, LayerNorm, StatsInit};
pub use params::{ParamBuilder, ParamEntry, ParamId, ParamStore, Session};

use thiserror::Error;

use crate::autodiff::TensorId;
use crate::num::Real;

#[derive(Debug, Error, PartialEq)]
pub enum LayerError {
    #[error("gated linear unit needs an even channel count, got {0}")]
    OddChannels(usize),
    #[error("model dim {dim} is not divisible by {heads} heads")]
    HeadsDontDivide { dim: usize, heads: usize },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimMismatch { what: &'static str, expected: usize, got: usize },
    #[error("batch norm `{0}` used in inference mode before any statistics exist")]
    StatsMissing(String),
}

/// Gated linear unit over the channel axis: split `[.., 2C]` into
/// `(a, b)` and return `a * sigmoid(b)`.
pub fn glu<R: Real>(
    sess: &mut Session<R>,
    x: TensorId,
) -> Result<TensorId, LayerError> {
    let shape = sess.tape.shape(x).to_vec();
    let channels = *shape.last().expect("glu needs a channel axis");
    if channels % 2 != 0 {
        return Err(LayerError::OddChannels(channels));
    }
    let half = channels / 2;
    let axis = shape.len() - 1;
    let a = sess.tape.slice_axis(x, axis, 0, half);
    let b = sess.tape.slice_axis(x, axis, half, channels);
    let gate = sess.tape.sigmoid(b);
    Ok(sess.tape.mul(a, gate))
}
