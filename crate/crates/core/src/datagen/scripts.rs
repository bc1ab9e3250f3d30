use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{MotionType, OPERATION_DIM};

pub const PEAK_LINEAR_M_S: f64 = 0.1;
pub const PEAK_ANGULAR_RAD_S: f64 = 0.4;
pub const SCRIPT_DURATION_S: f64 = 5.0;

/// Velocity profile of one operation axis. Times in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    Zero,
    Trapezoid {
        amplitude: f64,
        start: f64,
        ramp: f64,
        hold: f64,
    },
    HalfSine {
        amplitude: f64,
        start: f64,
        duration: f64,
    },
}

impl Profile {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Profile::Zero => 0.0,
            Profile::Trapezoid {
                amplitude,
                start,
                ramp,
                hold,
            } => {
                let u = t - start;
                if u <= 0.0 || u >= 2.0 * ramp + hold {
                    0.0
                } else if u < ramp {
                    amplitude * u / ramp
                } else if u <= ramp + hold {
                    amplitude
                } else {
                    amplitude * (2.0 * ramp + hold - u) / ramp
                }
            }
            Profile::HalfSine {
                amplitude,
                start,
                duration,
            } => {
                let u = t - start;
                if u <= 0.0 || u >= duration {
                    0.0
                } else {
                    amplitude * (std::f64::consts::PI * u / duration).sin()
                }
            }
        }
    }

    pub fn is_active(&self) -> bool {
        match *self {
            Profile::Zero => false,
            Profile::Trapezoid { amplitude, .. } | Profile::HalfSine { amplitude, .. } => {
                amplitude != 0.0
            }
        }
    }

    fn varied(self, gain: f64, shift: f64) -> Self {
        match self {
            Profile::Zero => Profile::Zero,
            Profile::Trapezoid {
                amplitude,
                start,
                ramp,
                hold,
            } => Profile::Trapezoid {
                amplitude: amplitude * gain,
                start: start + shift,
                ramp,
                hold,
            },
            Profile::HalfSine {
                amplitude,
                start,
                duration,
            } => Profile::HalfSine {
                amplitude: amplitude * gain,
                start: start + shift,
                duration,
            },
        }
    }
}

/// A labeled object motion: one velocity profile per operation axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionScript {
    pub label: String,
    pub motion_type: MotionType,
    pub duration_s: f64,
    pub profiles: [Profile; OPERATION_DIM],
}

impl MotionScript {
    pub fn velocity(&self, t: f64) -> [f64; OPERATION_DIM] {
        self.profiles.map(|p| p.at(t))
    }

    pub fn active_axes(&self) -> usize {
        self.profiles.iter().filter(|p| p.is_active()).count()
    }

    /// Type1 scripts drive one axis, Type2 scripts at least two.
    pub fn is_well_typed(&self) -> bool {
        match self.motion_type {
            MotionType::Type2Composite => self.active_axes() >= 2,
            MotionType::Type1Translation => {
                self.active_axes() == 1 && self.profiles[..3].iter().any(Profile::is_active)
            }
            MotionType::Type1Rotation => {
                self.active_axes() == 1 && self.profiles[3..].iter().any(Profile::is_active)
            }
        }
    }

    /// A repetition of the same motion: amplitude scaled by up to
    /// `amplitude_jitter` and onset shifted by up to `onset_jitter_s`.
    pub fn repetition(&self, amplitude_jitter: f64, onset_jitter_s: f64, r: &mut impl Rng) -> Self {
        let gain = 1.0 + r.random_range(-amplitude_jitter..=amplitude_jitter);
        let shift = r.random_range(-onset_jitter_s..=onset_jitter_s);
        Self {
            profiles: self.profiles.map(|p| p.varied(gain, shift)),
            ..self.clone()
        }
    }
}

fn peak(axis: usize) -> f64 {
    if axis < 3 {
        PEAK_LINEAR_M_S
    } else {
        PEAK_ANGULAR_RAD_S
    }
}

const AXIS_NAMES: [&str; OPERATION_DIM] = ["tx", "ty", "tz", "rx", "ry", "rz"];

fn sign_name(s: f64) -> char {
    if s > 0.0 {
        '+'
    } else {
        '-'
    }
}

/// The fixed library: 12 single-axis scripts (each axis, both directions)
/// and 24 composites of one translation axis with one rotation axis, some
/// with a second translation axis.
pub fn motion_library() -> Vec<MotionScript> {
    let mut lib = Vec::with_capacity(36);
    for axis in 0..OPERATION_DIM {
        for sign in [1.0, -1.0] {
            let mut profiles = [Profile::Zero; OPERATION_DIM];
            profiles[axis] = Profile::Trapezoid {
                amplitude: sign * peak(axis),
                start: 0.6,
                ramp: 0.8,
                hold: 2.0,
            };
            lib.push(MotionScript {
                label: format!("single-{}{}", sign_name(sign), AXIS_NAMES[axis]),
                motion_type: if axis < 3 {
                    MotionType::Type1Translation
                } else {
                    MotionType::Type1Rotation
                },
                duration_s: SCRIPT_DURATION_S,
                profiles,
            });
        }
    }
    let mut k = 0usize;
    for t in 0..3 {
        for r in 3..6 {
            for (st, sr) in [(1.0, 1.0), (-1.0, 1.0)] {
                let mut profiles = [Profile::Zero; OPERATION_DIM];
                profiles[t] = Profile::Trapezoid {
                    amplitude: st * peak(t),
                    start: 0.5,
                    ramp: 0.7,
                    hold: 1.6,
                };
                profiles[r] = Profile::HalfSine {
                    amplitude: sr * peak(r),
                    start: 1.0 + 0.5 * (k % 3) as f64,
                    duration: 2.6,
                };
                let label = format!(
                    "combo-{}{}{}{}",
                    sign_name(st),
                    AXIS_NAMES[t],
                    sign_name(sr),
                    AXIS_NAMES[r]
                );
                lib.push(MotionScript {
                    label,
                    motion_type: MotionType::Type2Composite,
                    duration_s: SCRIPT_DURATION_S,
                    profiles,
                });
                k += 1;
            }
        }
    }
    for (i, (t1, t2, r)) in [(0, 1, 5), (0, 2, 4), (1, 2, 3), (1, 0, 5), (2, 0, 4), (2, 1, 3)]
        .into_iter()
        .enumerate()
    {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        let mut profiles = [Profile::Zero; OPERATION_DIM];
        profiles[t1] = Profile::HalfSine {
            amplitude: peak(t1),
            start: 0.4,
            duration: 2.4,
        };
        profiles[t2] = Profile::HalfSine {
            amplitude: s * 0.7 * peak(t2),
            start: 2.2,
            duration: 2.4,
        };
        profiles[r] = Profile::Trapezoid {
            amplitude: -s * peak(r),
            start: 0.8,
            ramp: 0.9,
            hold: 1.4,
        };
        lib.push(MotionScript {
            label: format!(
                "sweep-{}{}{}{}-{}",
                AXIS_NAMES[t1],
                sign_name(s),
                AXIS_NAMES[t2],
                sign_name(-s),
                AXIS_NAMES[r]
            ),
            motion_type: MotionType::Type2Composite,
            duration_s: SCRIPT_DURATION_S,
            profiles,
        });
    }
    lib
}
