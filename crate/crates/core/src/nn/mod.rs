//! Fully-connected networks and the Adamax optimizer.

mod adamax;
mod mlp;

pub use adamax::{Adamax, AdamaxConfig};
pub use mlp::{init_mlp, Activation, BoundMlp, LinearLayer, Mlp, MlpSpec};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("layer {layer} has zero width")]
    ZeroWidth { layer: usize },
    #[error("an MLP needs at least one layer (two widths), got {0} widths")]
    TooFewWidths(usize),
    #[error("unknown activation `{0}`")]
    UnknownActivation(String),
    #[error("non-finite gradient in parameter {param} at element {index}; step refused")]
    NonFiniteGradient { param: usize, index: usize },
    #[error("gradient list does not match parameters: {0}")]
    GradientMismatch(String),
}
