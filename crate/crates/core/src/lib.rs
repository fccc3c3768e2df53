//! Margin-adaptation energy GANs at desk scale.
//!
//! The crate bundles a small reverse-mode autodiff engine, fully connected
//! networks with Adamax, the auto-encoder energy GAN with fixed and adaptive
//! hinge margins, an exact simulator of the optimal-discriminator dynamics
//! on finite supports, sample-quality metrics, and the file formats and run
//! orchestration used by the `magan` binary.

pub mod config;
pub mod data;
pub mod gan;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod registry;
pub mod rng;
pub mod sim;
pub mod tensor;
