use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::scripts::MotionScript;
use super::style::SyntheticUserStyle;
use crate::domain::{GestureFrame, HandlingClip, OperationFrame, GESTURE_DIM, OPERATION_DIM};
use crate::error::{Error, Result};

pub fn frame_count(duration_s: f64, rate_hz: f64) -> usize {
    (duration_s * rate_hz).round() as usize
}

/// Commanded velocities `v` and generator state `q` per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrajectory {
    pub velocities: Vec<[f64; OPERATION_DIM]>,
    pub state: Vec<[f64; OPERATION_DIM]>,
}

/// Runs the gesture generator state: `I` integrates velocity over frames and
/// `q` low-passes `I` with coefficient `smoothness`.
pub fn latent_trajectory(script: &MotionScript, smoothness: f64, rate_hz: f64) -> LatentTrajectory {
    let n = frame_count(script.duration_s, rate_hz);
    let dt = 1.0 / rate_hz;
    let mut integral = [0.0; OPERATION_DIM];
    let mut q = [0.0; OPERATION_DIM];
    let mut velocities = Vec::with_capacity(n);
    let mut state = Vec::with_capacity(n);
    for i in 0..n {
        let v = script.velocity(i as f64 * dt);
        for d in 0..OPERATION_DIM {
            integral[d] += v[d] * dt;
            q[d] = smoothness * integral[d] + (1.0 - smoothness) * q[d];
        }
        velocities.push(v);
        state.push(q);
    }
    LatentTrajectory { velocities, state }
}

/// Noise-free pose for generator state `q`.
pub fn pose_at(style: &SyntheticUserStyle, q: &[f64; OPERATION_DIM]) -> Vec<f64> {
    let mut x = style.base_pose.clone();
    for d in 0..OPERATION_DIM {
        let s = style.gains[d] * q[d];
        for (xi, b) in x.iter_mut().zip(&style.basis[d]) {
            *xi += s * b;
        }
    }
    x
}

/// Renders one demonstration of `script` in `style`.
pub fn render_clip(
    style: &SyntheticUserStyle,
    script: &MotionScript,
    rate_hz: f64,
    clip_id: &str,
    r: &mut impl Rng,
) -> HandlingClip {
    let traj = latent_trajectory(script, style.smoothness, rate_hz);
    let noise = (style.jitter_m > 0.0).then(|| Normal::new(0.0, style.jitter_m).unwrap());
    let mut gestures = Vec::with_capacity(traj.state.len());
    let mut operations = Vec::with_capacity(traj.state.len());
    for (i, (q, v)) in traj.state.iter().zip(&traj.velocities).enumerate() {
        let mut x = pose_at(style, q);
        if let Some(n) = &noise {
            for xi in x.iter_mut() {
                *xi += n.sample(r);
            }
        }
        gestures.push(GestureFrame {
            timestamp: i as f64 / rate_hz,
            keypoints: x,
        });
        operations.push(OperationFrame::from_slice(v));
    }
    HandlingClip {
        user_id: style.user_id.clone(),
        clip_id: clip_id.to_string(),
        motion_type: script.motion_type,
        motion_label: script.label.clone(),
        rate_hz,
        gestures,
        operations,
    }
}

/// Least-squares inverse of a style's gesture map.
#[derive(Clone, Debug)]
pub struct StyleInverse {
    pinv: DMatrix<f64>,
    base: DVector<f64>,
    smoothness: f64,
}

impl StyleInverse {
    pub fn new(style: &SyntheticUserStyle) -> Result<Self> {
        let m = DMatrix::from_fn(GESTURE_DIM, OPERATION_DIM, |i, d| style.gains[d] * style.basis[d][i]);
        let pinv = m
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Numeric(format!("style map pseudo-inverse: {e}")))?;
        Ok(Self {
            pinv,
            base: DVector::from_column_slice(&style.base_pose),
            smoothness: style.smoothness,
        })
    }

    /// Projects a pose onto generator state.
    pub fn state(&self, keypoints: &[f64]) -> [f64; OPERATION_DIM] {
        let q = &self.pinv * (DVector::from_column_slice(keypoints) - &self.base);
        std::array::from_fn(|d| q[d])
    }

    /// Reconstructs commanded velocities frame by frame by undoing the
    /// low-pass and the integration.
    pub fn velocities(&self, gestures: &[GestureFrame], rate_hz: f64) -> Vec<[f64; OPERATION_DIM]> {
        let a = self.smoothness;
        let mut q_prev = [0.0; OPERATION_DIM];
        let mut i_prev = [0.0; OPERATION_DIM];
        gestures
            .iter()
            .map(|g| {
                let q = self.state(&g.keypoints);
                let mut v = [0.0; OPERATION_DIM];
                for d in 0..OPERATION_DIM {
                    let integral = (q[d] - (1.0 - a) * q_prev[d]) / a;
                    v[d] = (integral - i_prev[d]) * rate_hz;
                    i_prev[d] = integral;
                }
                q_prev = q;
                v
            })
            .collect()
    }
}
