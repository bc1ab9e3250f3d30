//! Canonical right-hand skeleton and its articulation modes.

use crate::domain::{GESTURE_DIM, NUM_KEYPOINTS};

pub const WRIST: usize = 0;
pub const THUMB_CMC: usize = 1;
pub const INDEX_MCP: usize = 5;
pub const MIDDLE_MCP: usize = 9;
pub const RING_MCP: usize = 13;
pub const PINKY_MCP: usize = 17;

/// Rest pose in meters: wrist at the origin, fingers along +y, palm facing -z.
pub const TEMPLATE: [[f64; 3]; NUM_KEYPOINTS] = [
    [0.000, 0.000, 0.000],
    [0.025, 0.025, -0.008],
    [0.045, 0.050, -0.015],
    [0.060, 0.075, -0.020],
    [0.070, 0.095, -0.024],
    [0.025, 0.090, 0.000],
    [0.028, 0.130, -0.006],
    [0.030, 0.155, -0.012],
    [0.031, 0.175, -0.018],
    [0.000, 0.095, 0.002],
    [0.000, 0.140, -0.004],
    [0.000, 0.167, -0.010],
    [0.000, 0.190, -0.016],
    [-0.022, 0.090, 0.000],
    [-0.024, 0.130, -0.006],
    [-0.025, 0.155, -0.012],
    [-0.026, 0.175, -0.018],
    [-0.042, 0.080, -0.004],
    [-0.047, 0.110, -0.010],
    [-0.050, 0.128, -0.015],
    [-0.052, 0.145, -0.020],
];

/// First keypoint of each finger chain; each chain holds four keypoints.
pub const FINGER_ROOTS: [usize; 5] = [THUMB_CMC, INDEX_MCP, MIDDLE_MCP, RING_MCP, PINKY_MCP];

pub fn flatten(points: &[[f64; 3]; NUM_KEYPOINTS]) -> Vec<f64> {
    points.iter().flatten().copied().collect()
}

pub fn template() -> Vec<f64> {
    flatten(&TEMPLATE)
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn point(pose: &[f64], k: usize) -> [f64; 3] {
    [pose[3 * k], pose[3 * k + 1], pose[3 * k + 2]]
}

pub fn centroid(pose: &[f64]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for k in 0..NUM_KEYPOINTS {
        let p = point(pose, k);
        for i in 0..3 {
            c[i] += p[i] / NUM_KEYPOINTS as f64;
        }
    }
    c
}

/// Keypoint velocity field of a unit-rate rotation about `axis` through
/// `pivot`.
pub fn rotation_field(pose: &[f64], axis: [f64; 3], pivot: [f64; 3]) -> Vec<f64> {
    let mut out = vec![0.0; GESTURE_DIM];
    for k in 0..NUM_KEYPOINTS {
        let v = cross(axis, sub(point(pose, k), pivot));
        out[3 * k..3 * k + 3].copy_from_slice(&v);
    }
    out
}

/// Linearized articulation modes of `pose`: one curl per finger (rotation of
/// the chain about its root, around the palm's lateral axis) and a spread of
/// the four long fingers about the palm normal.
pub fn articulation_modes(pose: &[f64]) -> Vec<Vec<f64>> {
    let lateral = unit(sub(point(pose, INDEX_MCP), point(pose, PINKY_MCP)));
    let along = unit(sub(point(pose, MIDDLE_MCP), point(pose, WRIST)));
    let normal = unit(cross(lateral, along));
    let mut modes = Vec::new();
    for &root in &FINGER_ROOTS {
        let pivot = point(pose, root);
        let mut m = vec![0.0; GESTURE_DIM];
        for k in root + 1..root + 4 {
            let v = cross(lateral, sub(point(pose, k), pivot));
            m[3 * k..3 * k + 3].copy_from_slice(&v);
        }
        modes.push(m);
    }
    let mut spread = vec![0.0; GESTURE_DIM];
    for (i, &root) in FINGER_ROOTS[1..].iter().enumerate() {
        let sign = 1.5 - i as f64;
        let pivot = point(pose, root);
        for k in root..root + 4 {
            let v = cross(normal, sub(point(pose, k), pivot));
            for j in 0..3 {
                spread[3 * k + j] = sign * v[j];
            }
        }
    }
    modes.push(spread);
    modes
}

pub fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
