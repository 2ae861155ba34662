//! The enhancement architecture: feature-extraction front end, parallel
//! mask and complex-domain paths, and the compensation fusion.

mod comeb;
mod compensation;
mod config;
mod feb;
mod gru;
mod mask_block;
mod model;
mod ublock;

pub use comeb::Comeb;
pub use compensation::{compensate, compensate_graph, CompensationError, CompensationResult};
pub use config::{ComebConfig, ConfigError, FebConfig, MbConfig, ModelConfig, ModelScale};
pub use feb::Feb;
pub use gru::{GruAttention, GruDilated};
pub use mask_block::{Mask, MaskBlock, MaskError};
pub use model::{param_count, shape_table, Model, ModelParts};
pub use ublock::UBlock;
