//! The latent recurrent handling policy and its attentive non-autoregressive
//! variant.

mod cchp;
pub mod config;
pub mod layers;
pub mod normalizer;

pub use cchp::{
    context_attention, context_summary, infer_stream, CchpModel, ElboDiagnostics, ElboTerms,
    EpisodeNoise, OperationGaussian, PreparedBatch, StreamSession, KIND_CCHP, KIND_RANP, SIGMA_FLOOR,
};
pub(crate) use cchp::check_same_layout;
pub use config::CchpConfig;
pub use normalizer::Normalizer;
