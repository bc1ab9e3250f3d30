//! Context-conditioned latent recurrent policies that translate hand
//! gesture sequences into end-effector velocity commands, with the data
//! generator, baselines, trainer and evaluation harness around them.

pub mod baselines;
pub mod datagen;
pub mod domain;
pub mod error;
pub mod eval;
pub mod model;
pub mod models;
pub mod trainer;

pub use error::{Error, Result};
