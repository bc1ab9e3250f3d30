use cchp_autodiff::rng;
use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::skeleton::{self, dot, norm};
use crate::domain::{GESTURE_DIM, NUM_KEYPOINTS, OPERATION_DIM};
use crate::error::{Error, Result};

pub const MAX_BASIS_ATTEMPTS: usize = 100;
pub const MAX_ABS_COSINE: f64 = 0.9;

/// Ranges from which user styles are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleConfig {
    pub hand_scale: (f64, f64),
    pub tilt_rad: f64,
    pub position_spread_m: f64,
    pub axis_perturbation: f64,
    pub articulation_angle: (f64, f64),
    pub gain: (f64, f64),
    pub jitter_m: f64,
    pub smoothness: f64,
}

impl Default for StyleConfig {
    fn default() -> Self {
        Self {
            hand_scale: (0.85, 1.15),
            tilt_rad: 0.25,
            position_spread_m: 0.05,
            axis_perturbation: 0.25,
            articulation_angle: (0.1, 0.5),
            gain: (0.6, 1.6),
            jitter_m: 0.002,
            smoothness: 0.5,
        }
    }
}

/// How one synthetic user turns commanded velocities into hand motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticUserStyle {
    pub user_id: String,
    pub seed: u64,
    pub base_pose: Vec<f64>,
    /// Unit-norm keypoint displacement pattern per operation axis.
    pub basis: Vec<Vec<f64>>,
    pub gains: [f64; OPERATION_DIM],
    pub smoothness: f64,
    pub jitter_m: f64,
}

impl SyntheticUserStyle {
    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.base_pose.len() != GESTURE_DIM || !self.base_pose.iter().all(|v| v.is_finite()) {
            return Err("base pose must hold 63 finite values".into());
        }
        if self.basis.len() != OPERATION_DIM {
            return Err(format!("expected 6 basis patterns, got {}", self.basis.len()));
        }
        for (d, b) in self.basis.iter().enumerate() {
            if b.len() != GESTURE_DIM || (norm(b) - 1.0).abs() > 1e-9 {
                return Err(format!("basis {d} is not a unit 63-vector"));
            }
        }
        if let Some(c) = max_abs_cosine(&self.basis) {
            if c >= MAX_ABS_COSINE {
                return Err(format!("basis patterns too aligned (|cos| = {c:.3})"));
            }
        }
        if !self.gains.iter().all(|g| g.is_finite() && *g > 0.0) {
            return Err("gains must be positive".into());
        }
        if !(self.smoothness > 0.0 && self.smoothness <= 1.0) {
            return Err(format!("smoothness {} outside (0, 1]", self.smoothness));
        }
        if !(self.jitter_m >= 0.0) {
            return Err("jitter must be nonnegative".into());
        }
        Ok(())
    }

    /// Columns `s_d B_d` of the linear gesture map.
    pub fn scaled_basis(&self) -> Vec<Vec<f64>> {
        self.basis
            .iter()
            .zip(&self.gains)
            .map(|(b, g)| b.iter().map(|v| v * g).collect())
            .collect()
    }
}

pub fn max_abs_cosine(basis: &[Vec<f64>]) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for i in 0..basis.len() {
        for j in i + 1..basis.len() {
            let c = dot(&basis[i], &basis[j]).abs() / (norm(&basis[i]) * norm(&basis[j]));
            worst = Some(worst.map_or(c, |w| w.max(c)));
        }
    }
    worst
}

fn gaussian3(r: &mut impl Rng) -> [f64; 3] {
    [
        StandardNormal.sample(r),
        StandardNormal.sample(r),
        StandardNormal.sample(r),
    ]
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

fn base_pose(cfg: &StyleConfig, r: &mut impl Rng) -> Vec<f64> {
    let scale = r.random_range(cfg.hand_scale.0..=cfg.hand_scale.1);
    let tilt = Vector3::from(gaussian3(r)) * (cfg.tilt_rad / 3f64.sqrt());
    let rot = Rotation3::from_scaled_axis(tilt);
    let offset = Vector3::from(gaussian3(r)) * cfg.position_spread_m + Vector3::new(0.0, 0.0, 0.5);
    let mut pose = vec![0.0; GESTURE_DIM];
    for (k, p) in skeleton::TEMPLATE.iter().enumerate() {
        let q = rot * (Vector3::from(*p) * scale) + offset;
        pose[3 * k..3 * k + 3].copy_from_slice(q.as_slice());
    }
    pose
}

fn draw_basis(cfg: &StyleConfig, pose: &[f64], r: &mut impl Rng) -> (Vec<Vec<f64>>, [f64; OPERATION_DIM]) {
    let modes = skeleton::articulation_modes(pose);
    let pivot = skeleton::centroid(pose);
    let mut basis = Vec::with_capacity(OPERATION_DIM);
    let mut gains = [0.0; OPERATION_DIM];
    for d in 0..OPERATION_DIM {
        let mut axis = gaussian3(r).map(|v| v * cfg.axis_perturbation);
        axis[d % 3] += 1.0;
        let axis = skeleton::unit(axis);
        let rigid: Vec<f64> = if d < 3 {
            (0..NUM_KEYPOINTS).flat_map(|_| axis).collect()
        } else {
            skeleton::rotation_field(pose, axis, pivot)
        };
        let nominal = norm(&rigid);
        let mix: Vec<f64> = modes
            .iter()
            .map(|_| StandardNormal.sample(r))
            .collect::<Vec<f64>>();
        let mut art = vec![0.0; GESTURE_DIM];
        for (m, w) in modes.iter().zip(&mix) {
            let mn = norm(m);
            for (a, v) in art.iter_mut().zip(m) {
                *a += w * v / mn;
            }
        }
        let art = normalized(art);
        let alpha: f64 = r.random_range(cfg.articulation_angle.0..=cfg.articulation_angle.1);
        let mixed: Vec<f64> = rigid
            .iter()
            .zip(&art)
            .map(|(p, a)| alpha.cos() * p / nominal + alpha.sin() * a)
            .collect();
        let mixed_norm = norm(&mixed);
        let g = (r.random_range(cfg.gain.0.ln()..=cfg.gain.1.ln())).exp();
        // The rigid part of s_d B_d equals g times the unit-rate rigid field.
        gains[d] = g * nominal * mixed_norm / alpha.cos();
        basis.push(normalized(mixed));
    }
    (basis, gains)
}

/// Draws a user style from `seed`.
pub fn generate_user_style(user_id: &str, seed: u64, cfg: &StyleConfig) -> Result<SyntheticUserStyle> {
    let mut r = rng::stream(seed, &[0x57e1]);
    let base_pose = base_pose(cfg, &mut r);
    for _ in 0..MAX_BASIS_ATTEMPTS {
        let (basis, gains) = draw_basis(cfg, &base_pose, &mut r);
        if max_abs_cosine(&basis).is_none_or(|c| c < MAX_ABS_COSINE) {
            return Ok(SyntheticUserStyle {
                user_id: user_id.to_string(),
                seed,
                base_pose,
                basis,
                gains,
                smoothness: cfg.smoothness,
                jitter_m: cfg.jitter_m,
            });
        }
    }
    Err(Error::StyleGenFailure(MAX_BASIS_ATTEMPTS))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_style() {
        let c = StyleConfig::default();
        assert_eq!(
            generate_user_style("a", 5, &c).unwrap(),
            generate_user_style("a", 5, &c).unwrap()
        );
        assert_ne!(
            generate_user_style("a", 5, &c).unwrap().basis,
            generate_user_style("a", 6, &c).unwrap().basis
        );
    }

    #[test]
    fn hundred_styles_are_valid() {
        let c = StyleConfig::default();
        for s in 0..100 {
            let style = generate_user_style("u", s, &c).unwrap();
            style.check().unwrap();
        }
    }

    #[test]
    fn aligned_basis_fails_check() {
        let mut style = generate_user_style("u", 1, &StyleConfig::default()).unwrap();
        style.basis[1] = style.basis[0].clone();
        assert!(style.check().is_err());
    }
}
