//! Comparison policies: rigid motion cloning, a context-free recurrent
//! regressor, and the non-autoregressive attentive variant of the latent
//! policy.

mod lstm;
mod motion_cloning;

pub use lstm::{LstmConfig, LstmRegressor, SequenceBatch, KIND_LSTM};
pub use motion_cloning::{
    motion_cloning_sequence, motion_cloning_step, rigid_velocity, RigidVelocityEstimate, DEFAULT_GAIN,
};

use crate::error::Result;
use crate::model::{CchpConfig, CchpModel, Normalizer};

/// The latent policy without previous-operation feedback in its decoder.
pub fn ranp_model(normalizer: Normalizer, seed: u64) -> Result<CchpModel> {
    CchpModel::new(CchpConfig::ranp(), normalizer, seed)
}
