//! Auto-encoder energy GAN: model, hinge losses, margin control, and the
//! epoch-level training loop.

mod margin;
mod model;
mod train;

pub use margin::{
    margin_policy_registry, AdaptiveMargin, FixedMargin, MarginPolicy, MarginPolicyRegistry,
    MarginState, PolicyParams,
};
pub use model::{
    balanced_latent_dim, disc_loss, energy, gen_loss, Discriminator, GanArch, GanModel,
};
pub use train::{pretrain, train, train_epoch, EpochRecord, RunTrace, TrainOutcome, Trainer};

use thiserror::Error;

use crate::config::ConfigError;
use crate::data::DataError;
use crate::nn::NnError;
use crate::registry::RegistryError;
use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GanError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("non-finite {phase} loss {value} at epoch {epoch}, batch {batch}")]
    NonFinite {
        phase: &'static str,
        epoch: usize,
        batch: usize,
        value: f64,
    },
    #[error("epoch accumulated no samples")]
    EmptyEpoch,
    #[error("margin update refused: mean real energy {mean_real} with margin {margin} fails the update conditions")]
    MarginPrecondition { margin: f64, mean_real: f64 },
    #[error("adaptive margin needs the pre-trained real-data energy")]
    MissingPretraining,
    #[error("architecture mismatch: {0}")]
    Architecture(String),
}
