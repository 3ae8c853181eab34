//! Representation pretraining objectives for multitask imitation, studied on
//! contextual MDPs whose dynamics are linear in a hidden latent state.

pub mod codec;
pub mod data;
pub mod env;
pub mod error;
pub mod experiment;
pub mod finetune;
pub mod linalg;
pub mod nn;
pub mod pretrain;
pub mod probes;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
