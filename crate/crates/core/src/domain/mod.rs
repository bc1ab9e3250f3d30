//! Gesture and operation frames, demonstration clips, and the corpus.
//!
//! Units: keypoints in meters, linear velocity in m/s, angular velocity in
//! rad/s, time in seconds. cm/s and deg/s only appear in reported metrics.

mod io;
mod split;

pub use io::{
    read_clips, read_corpus, read_json, write_clips, write_corpus, write_json, CorpusManifest,
    ManifestUser, CLIPS_DIR, MANIFEST_FILE,
};
pub use split::{split_corpus, ClipKey, SplitSpec, TYPE1_PER_USER, TYPE2_PER_USER};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_KEYPOINTS: usize = 21;
pub const GESTURE_DIM: usize = NUM_KEYPOINTS * 3;
pub const OPERATION_DIM: usize = 6;

/// Default capture rate and clip length.
pub const DEFAULT_RATE_HZ: f64 = 10.0;
pub const DEFAULT_CLIP_FRAMES: usize = 50;

/// Keypoint order used in every gesture frame; keypoint `k` occupies
/// coordinates `3k..3k+3` as `(x, y, z)`.
pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "wrist",
    "thumb_cmc",
    "thumb_mcp",
    "thumb_ip",
    "thumb_tip",
    "index_mcp",
    "index_pip",
    "index_dip",
    "index_tip",
    "middle_mcp",
    "middle_pip",
    "middle_dip",
    "middle_tip",
    "ring_mcp",
    "ring_pip",
    "ring_dip",
    "ring_tip",
    "pinky_mcp",
    "pinky_pip",
    "pinky_dip",
    "pinky_tip",
];

/// One hand pose: 21 keypoints flattened to 63 coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GestureFrame {
    #[serde(rename = "t")]
    pub timestamp: f64,
    pub keypoints: Vec<f64>,
}

impl GestureFrame {
    pub fn new(timestamp: f64, keypoints: Vec<f64>) -> Result<Self> {
        if keypoints.len() != GESTURE_DIM {
            return Err(Error::Shape(format!(
                "gesture frame has {} coordinates, expected {GESTURE_DIM}",
                keypoints.len()
            )));
        }
        Ok(Self {
            timestamp,
            keypoints,
        })
    }

    pub fn keypoint(&self, k: usize) -> [f64; 3] {
        [
            self.keypoints[3 * k],
            self.keypoints[3 * k + 1],
            self.keypoints[3 * k + 2],
        ]
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for k in 0..NUM_KEYPOINTS {
            for (a, &v) in c.iter_mut().zip(&self.keypoint(k)) {
                *a += v;
            }
        }
        c.map(|v| v / NUM_KEYPOINTS as f64)
    }
}

/// Cartesian rigid-body velocity of the end-effector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OperationFrame {
    pub linear: [f64; 3],
    pub angular: [f64; 3],
}

impl OperationFrame {
    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            linear: [v[0], v[1], v[2]],
            angular: [v[3], v[4], v[5]],
        }
    }

    pub fn to_array(self) -> [f64; OPERATION_DIM] {
        let [a, b, c] = self.linear;
        let [d, e, f] = self.angular;
        [a, b, c, d, e, f]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MotionType {
    Type1Translation,
    Type1Rotation,
    Type2Composite,
}

impl MotionType {
    pub fn is_type1(self) -> bool {
        !matches!(self, MotionType::Type2Composite)
    }
}

/// One demonstration: a gesture sequence and the operations it asked for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandlingClip {
    pub user_id: String,
    pub clip_id: String,
    pub motion_type: MotionType,
    pub motion_label: String,
    pub rate_hz: f64,
    pub gestures: Vec<GestureFrame>,
    pub operations: Vec<OperationFrame>,
}

impl HandlingClip {
    pub fn len(&self) -> usize {
        self.gestures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gestures.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ValidationIssue {
    LengthMismatch { gestures: usize, operations: usize },
    TooShort(usize),
    WrongKeypointCount { frame: usize, len: usize },
    NonFiniteValue { frame: usize, index: usize },
    NonFiniteOperation { frame: usize, index: usize },
    NonMonotoneTimestamp { frame: usize },
    InvalidRate(f64),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Lists every violated clip invariant. Never fails.
pub fn validate_clip(clip: &HandlingClip) -> ValidationReport {
    let mut issues = Vec::new();
    let (ng, no) = (clip.gestures.len(), clip.operations.len());
    if ng != no {
        issues.push(ValidationIssue::LengthMismatch {
            gestures: ng,
            operations: no,
        });
    }
    if ng.min(no) < 2 {
        issues.push(ValidationIssue::TooShort(ng.min(no)));
    }
    if !(clip.rate_hz.is_finite() && clip.rate_hz > 0.0) {
        issues.push(ValidationIssue::InvalidRate(clip.rate_hz));
    }
    for (f, g) in clip.gestures.iter().enumerate() {
        if g.keypoints.len() != GESTURE_DIM {
            issues.push(ValidationIssue::WrongKeypointCount {
                frame: f,
                len: g.keypoints.len(),
            });
        }
        if let Some(j) = g.keypoints.iter().position(|v| !v.is_finite()) {
            issues.push(ValidationIssue::NonFiniteValue { frame: f, index: j });
        }
        if !g.timestamp.is_finite() {
            issues.push(ValidationIssue::NonFiniteValue {
                frame: f,
                index: GESTURE_DIM,
            });
        }
        if f > 0 && !(g.timestamp > clip.gestures[f - 1].timestamp) {
            issues.push(ValidationIssue::NonMonotoneTimestamp { frame: f });
        }
    }
    for (f, o) in clip.operations.iter().enumerate() {
        if let Some(j) = o.to_array().iter().position(|v| !v.is_finite()) {
            issues.push(ValidationIssue::NonFiniteOperation { frame: f, index: j });
        }
    }
    ValidationReport { issues }
}

fn lerp(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + (y - x) * w).collect()
}

/// Linearly interpolates gestures and operations onto a uniform grid at
/// `target_rate` starting at the first timestamp and not passing the last.
pub fn resample_sequence(clip: &HandlingClip, target_rate: f64) -> Result<HandlingClip> {
    if !(target_rate.is_finite() && target_rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target rate must be positive, got {target_rate}"
        )));
    }
    let n = clip.gestures.len().min(clip.operations.len());
    if n < 2 {
        return Err(Error::DegenerateClip(n));
    }
    let t0 = clip.gestures[0].timestamp;
    let t1 = clip.gestures[n - 1].timestamp;
    let step = 1.0 / target_rate;
    let count = ((t1 - t0) / step + 1e-9).floor() as usize + 1;
    let mut gestures = Vec::with_capacity(count);
    let mut operations = Vec::with_capacity(count);
    let mut seg = 0;
    for i in 0..count {
        let t = t0 + i as f64 * step;
        while seg + 2 < n && clip.gestures[seg + 1].timestamp <= t {
            seg += 1;
        }
        let (ga, gb) = (&clip.gestures[seg], &clip.gestures[seg + 1]);
        let w = ((t - ga.timestamp) / (gb.timestamp - ga.timestamp)).clamp(0.0, 1.0);
        let (keypoints, op) = if w == 0.0 {
            (ga.keypoints.clone(), clip.operations[seg])
        } else if w == 1.0 {
            (gb.keypoints.clone(), clip.operations[seg + 1])
        } else {
            let oa = clip.operations[seg].to_array();
            let ob = clip.operations[seg + 1].to_array();
            (
                lerp(&ga.keypoints, &gb.keypoints, w),
                OperationFrame::from_slice(&lerp(&oa, &ob, w)),
            )
        };
        gestures.push(GestureFrame {
            timestamp: t,
            keypoints,
        });
        operations.push(op);
    }
    Ok(HandlingClip {
        rate_hz: target_rate,
        gestures,
        operations,
        ..clip.clone()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UserGroup {
    InSample,
    OutSample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub group: UserGroup,
    pub clips: Vec<HandlingClip>,
}

impl UserRecord {
    pub fn count(&self, pred: impl Fn(MotionType) -> bool) -> usize {
        self.clips.iter().filter(|c| pred(c.motion_type)).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub rate_hz: f64,
    pub users: Vec<UserRecord>,
}

impl Corpus {
    pub fn user(&self, id: &str) -> Option<&UserRecord> {
        self.users.iter().find(|u| u.user_id == id)
    }

    pub fn num_clips(&self) -> usize {
        self.users.iter().map(|u| u.clips.len()).sum()
    }

    pub fn clip(&self, key: &ClipKey) -> Option<&HandlingClip> {
        self.user(&key.user)?
            .clips
            .iter()
            .find(|c| c.clip_id == key.clip)
    }

    pub fn users_in(&self, group: UserGroup) -> impl Iterator<Item = &UserRecord> {
        self.users.iter().filter(move |u| u.group == group)
    }
}

/// Context pairs `(x_C, y_C)`: one or more clips of one user concatenated
/// in time.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextSet {
    pub user_id: String,
    pub gestures: Vec<GestureFrame>,
    pub operations: Vec<OperationFrame>,
}

impl ContextSet {
    pub fn from_clips<'a>(clips: impl IntoIterator<Item = &'a HandlingClip>) -> Result<Self> {
        let mut it = clips.into_iter().peekable();
        let user_id = it.peek().ok_or(Error::EmptyContext)?.user_id.clone();
        let mut gestures = Vec::new();
        let mut operations = Vec::new();
        for c in it {
            if c.user_id != user_id {
                return Err(Error::InvalidArgument(format!(
                    "context mixes users {user_id} and {}",
                    c.user_id
                )));
            }
            gestures.extend(c.gestures.iter().cloned());
            operations.extend(c.operations.iter().copied());
        }
        Ok(Self {
            user_id,
            gestures,
            operations,
        })
    }

    pub fn len(&self) -> usize {
        self.gestures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gestures.is_empty()
    }
}

/// Target gestures, with operations when they are known.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSet {
    pub user_id: String,
    pub gestures: Vec<GestureFrame>,
    pub operations: Option<Vec<OperationFrame>>,
}

impl TargetSet {
    pub fn from_clip(clip: &HandlingClip) -> Self {
        Self {
            user_id: clip.user_id.clone(),
            gestures: clip.gestures.clone(),
            operations: Some(clip.operations.clone()),
        }
    }

    pub fn len(&self) -> usize {
        self.gestures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gestures.is_empty()
    }
}
