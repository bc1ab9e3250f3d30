use serde::{Deserialize, Serialize};

use crate::domain::{GESTURE_DIM, OPERATION_DIM};
use crate::error::{Error, Result};

/// Layer sizes of the latent recurrent policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CchpConfig {
    pub hidden_size: usize,
    pub latent_dim: usize,
    /// Hidden and output widths of the gesture feature extractor.
    pub hand_widths: Vec<usize>,
    /// Width of the aggregation projection and the latent trunk layers.
    pub trunk_widths: Vec<usize>,
    /// Hidden widths of each output head; every head ends in 2 outputs.
    pub head_widths: Vec<usize>,
    pub gesture_dim: usize,
    pub operation_dim: usize,
    /// Feed the previous operation into the recurrent cell. Disabling this
    /// gives the non-autoregressive attentive variant.
    pub autoregressive: bool,
}

impl Default for CchpConfig {
    fn default() -> Self {
        Self {
            hidden_size: 128,
            latent_dim: 32,
            hand_widths: vec![128, 64, 32],
            trunk_widths: vec![128, 128, 128, 128],
            head_widths: vec![128, 64],
            gesture_dim: GESTURE_DIM,
            operation_dim: OPERATION_DIM,
            autoregressive: true,
        }
    }
}

impl CchpConfig {
    /// A tiny configuration for gradient checks.
    pub fn miniature() -> Self {
        Self {
            hidden_size: 8,
            latent_dim: 4,
            hand_widths: vec![6, 5, 4],
            trunk_widths: vec![6, 6],
            head_widths: vec![5, 4],
            ..Self::default()
        }
    }

    pub fn ranp() -> Self {
        Self {
            autoregressive: false,
            ..Self::default()
        }
    }

    pub fn hand_feature_dim(&self) -> usize {
        *self.hand_widths.last().unwrap_or(&0)
    }

    pub fn cell_input_dim(&self) -> usize {
        self.hand_feature_dim() + if self.autoregressive { self.operation_dim } else { 0 }
    }

    pub fn head_input_dim(&self) -> usize {
        self.operation_dim + self.hidden_size + self.latent_dim
    }

    pub fn validate(&self) -> Result<()> {
        let widths = self
            .hand_widths
            .iter()
            .chain(&self.trunk_widths)
            .chain(&self.head_widths);
        let all_positive = [self.hidden_size, self.latent_dim, self.gesture_dim, self.operation_dim]
            .iter()
            .chain(widths)
            .all(|&w| w > 0);
        if !all_positive || self.hand_widths.is_empty() || self.trunk_widths.is_empty() {
            return Err(Error::InvalidArgument(format!("invalid model widths: {self:?}")));
        }
        if self.operation_dim != OPERATION_DIM || self.gesture_dim != GESTURE_DIM {
            return Err(Error::InvalidArgument(format!(
                "model must map {GESTURE_DIM} gesture coordinates to {OPERATION_DIM} operation axes"
            )));
        }
        Ok(())
    }
}
