use serde::{Deserialize, Serialize};

use crate::domain::{HandlingClip, GESTURE_DIM, OPERATION_DIM};
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-6;

/// Per-coordinate affine standardization of gestures and operations, fitted
/// on the training clips and stored with the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self::identity()
    }
}

fn moments(rows: impl Iterator<Item = Vec<f64>>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0.0;
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for r in rows {
        n += 1.0;
        for (j, v) in r.iter().enumerate() {
            sum[j] += v;
            sq[j] += v * v;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s / n - m * m).max(0.0).sqrt().max(STD_FLOOR))
        .collect();
    (mean, std)
}

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            x_mean: vec![0.0; GESTURE_DIM],
            x_std: vec![1.0; GESTURE_DIM],
            y_mean: vec![0.0; OPERATION_DIM],
            y_std: vec![1.0; OPERATION_DIM],
        }
    }

    pub fn fit<'a>(clips: impl IntoIterator<Item = &'a HandlingClip> + Clone) -> Result<Self> {
        if clips.clone().into_iter().all(|c| c.is_empty()) {
            return Err(Error::InsufficientData("no frames to fit the normalizer".into()));
        }
        let (x_mean, x_std) = moments(
            clips
                .clone()
                .into_iter()
                .flat_map(|c| c.gestures.iter().map(|g| g.keypoints.clone())),
            GESTURE_DIM,
        );
        let (y_mean, y_std) = moments(
            clips
                .into_iter()
                .flat_map(|c| c.operations.iter().map(|o| o.to_array().to_vec())),
            OPERATION_DIM,
        );
        Ok(Self {
            x_mean,
            x_std,
            y_mean,
            y_std,
        })
    }

    pub fn gesture(&self, x: &[f64], out: &mut Vec<f64>) {
        out.extend(x.iter().zip(&self.x_mean).zip(&self.x_std).map(|((v, m), s)| (v - m) / s));
    }

    pub fn operation(&self, y: &[f64], out: &mut Vec<f64>) {
        out.extend(y.iter().zip(&self.y_mean).zip(&self.y_std).map(|((v, m), s)| (v - m) / s));
    }

    pub fn operation_raw(&self, y_n: &[f64]) -> [f64; OPERATION_DIM] {
        std::array::from_fn(|d| y_n[d] * self.y_std[d] + self.y_mean[d])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{GestureFrame, MotionType, OperationFrame};

    #[test]
    fn fitted_data_is_standardized() {
        let clip = HandlingClip {
            user_id: "u".into(),
            clip_id: "c".into(),
            motion_type: MotionType::Type1Translation,
            motion_label: "m".into(),
            rate_hz: 10.0,
            gestures: (0..4)
                .map(|i| GestureFrame::new(i as f64, vec![i as f64; GESTURE_DIM]).unwrap())
                .collect(),
            operations: (0..4)
                .map(|i| OperationFrame::from_slice(&[i as f64 * 2.0, 1.0, 0.0, 0.0, 0.0, 0.0]))
                .collect(),
        };
        let n = Normalizer::fit([&clip]).unwrap();
        assert!((n.x_mean[0] - 1.5).abs() < 1e-12);
        assert!((n.x_std[0] - 1.25f64.sqrt()).abs() < 1e-12);
        assert_eq!(n.y_std[1], STD_FLOOR);
        let mut out = Vec::new();
        n.operation(&clip.operations[3].to_array(), &mut out);
        let back = n.operation_raw(&out);
        for (a, b) in back.iter().zip(clip.operations[3].to_array()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
