use nalgebra::{Matrix3, Vector3};

use crate::domain::{GestureFrame, OperationFrame, NUM_KEYPOINTS};
use crate::error::{Error, Result};

/// Relative eigenvalue below which the keypoint spread counts as rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

pub const DEFAULT_GAIN: f64 = 1.0;

/// Least-squares rigid motion between two consecutive hand poses.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidVelocityEstimate {
    pub linear: [f64; 3],
    pub angular: [f64; 3],
    /// RMS distance in meters between the moved and observed keypoints.
    pub residual: f64,
    pub rotation: [[f64; 3]; 3],
}

fn points(frame: &GestureFrame) -> Result<Vec<Vector3<f64>>> {
    if frame.keypoints.len() != 3 * NUM_KEYPOINTS {
        return Err(Error::Shape(format!("gesture frame has {} coordinates", frame.keypoints.len())));
    }
    Ok(frame
        .keypoints
        .chunks(3)
        .map(|p| Vector3::new(p[0], p[1], p[2]))
        .collect())
}

fn centroid(p: &[Vector3<f64>]) -> Vector3<f64> {
    p.iter().sum::<Vector3<f64>>() / p.len() as f64
}

/// Axis times angle of a rotation matrix, accurate for small angles.
fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let w = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let s = w.norm();
    let angle = s.atan2(c);
    if c > -0.9 {
        return if s < 1e-300 { w } else { w * (angle / s) };
    }
    // Near a half turn the antisymmetric part vanishes; read the axis from
    // the symmetric part instead.
    let m = ((r + r.transpose()) * 0.5 - Matrix3::identity() * c) / (1.0 - c);
    let k = (0..3).max_by(|&a, &b| m[(a, a)].total_cmp(&m[(b, b)])).unwrap();
    let mut axis = m.column(k).into_owned() / m[(k, k)].sqrt();
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * angle
}

/// Kabsch fit of the motion from `prev` to `cur`, expressed as velocities.
pub fn rigid_velocity(prev: &GestureFrame, cur: &GestureFrame, dt: f64) -> Result<RigidVelocityEstimate> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("time step {dt} must be positive")));
    }
    let p = points(prev)?;
    let q = points(cur)?;
    let (cp, cq) = (centroid(&p), centroid(&q));
    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (a, b) in p.iter().zip(&q) {
        let (a, b) = (a - cp, b - cq);
        h += a * b.transpose();
        spread += a * a.transpose();
    }
    let rms = |r: &Matrix3<f64>| {
        let s: f64 = p.iter().zip(&q).map(|(a, b)| (r * (a - cp) - (b - cq)).norm_squared()).sum();
        (s / p.len() as f64).sqrt()
    };
    let eig = spread.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo < RANK_TOLERANCE * hi {
        return Err(Error::DegenerateFit {
            residual: rms(&Matrix3::identity()),
        });
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (v_t.transpose() * u.transpose()).determinant().signum();
    let r = v_t.transpose() * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let axis_angle = rotation_log(&r);
    let lin = (cq - cp) / dt;
    let ang = axis_angle / dt;
    Ok(RigidVelocityEstimate {
        linear: [lin.x, lin.y, lin.z],
        angular: [ang.x, ang.y, ang.z],
        residual: rms(&r),
        rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
    })
}

/// Mirrors the hand's rigid motion between two frames onto the end effector.
pub fn motion_cloning_step(prev: &GestureFrame, cur: &GestureFrame, dt: f64, gain: f64) -> Result<OperationFrame> {
    let e = rigid_velocity(prev, cur, dt)?;
    Ok(OperationFrame {
        linear: e.linear.map(|v| gain * v),
        angular: e.angular.map(|v| gain * v),
    })
}

/// Clones a whole gesture sequence. The first frame has no predecessor and
/// degenerate fits give no motion; both map to zero velocity.
pub fn motion_cloning_sequence(gestures: &[GestureFrame], gain: f64) -> Result<Vec<OperationFrame>> {
    let mut out = Vec::with_capacity(gestures.len());
    if !gestures.is_empty() {
        out.push(OperationFrame::default());
    }
    for w in gestures.windows(2) {
        let dt = w[1].timestamp - w[0].timestamp;
        out.push(match motion_cloning_step(&w[0], &w[1], dt, gain) {
            Ok(o) => o,
            Err(Error::DegenerateFit { .. }) => OperationFrame::default(),
            Err(e) => return Err(e),
        });
    }
    Ok(out)
}
