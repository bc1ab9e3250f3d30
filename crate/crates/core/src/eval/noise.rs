use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::domain::GestureFrame;

pub const SIGMA_T_M: f64 = 0.005;
pub const SIGMA_R_RAD: f64 = 0.025;

/// Per frame, rotates the keypoint cloud about its centroid by a random
/// small rotation (uniform axis, angle ~ N(0, sigma_r^2)) and then shifts
/// every keypoint by one offset ~ N(0, sigma_t^2 I).
pub fn apply_test_noise(gestures: &[GestureFrame], sigma_t: f64, sigma_r: f64, r: &mut impl Rng) -> Vec<GestureFrame> {
    if sigma_t == 0.0 && sigma_r == 0.0 {
        return gestures.to_vec();
    }
    let shift = Normal::new(0.0, sigma_t.max(0.0)).expect("finite sigma");
    let turn = Normal::new(0.0, sigma_r.max(0.0)).expect("finite sigma");
    gestures
        .iter()
        .map(|g| {
            let offset = Vector3::from_fn(|_, _| shift.sample(r));
            let axis = loop {
                let v = Vector3::<f64>::from_fn(|_, _| r.sample(StandardNormal));
                if v.norm() > 1e-12 {
                    break Unit::new_normalize(v);
                }
            };
            let rot = Rotation3::from_axis_angle(&axis, turn.sample(r));
            let pts: Vec<Vector3<f64>> = g.keypoints.chunks(3).map(|p| Vector3::new(p[0], p[1], p[2])).collect();
            let c = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
            let keypoints = pts
                .iter()
                .flat_map(|p| {
                    let q = c + rot * (p - c) + offset;
                    [q.x, q.y, q.z]
                })
                .collect();
            GestureFrame {
                timestamp: g.timestamp,
                keypoints,
            }
        })
        .collect()
}
