//! Synthetic demonstrations with a known gesture-to-operation mapping.
//!
//! Each synthetic user owns a linear style: the pose at frame `t` is
//! `base + sum_d s_d B_d q_d(t) + jitter`, where `q_d` low-passes the
//! running integral of the commanded velocity on axis `d`. The map is
//! invertible, so the style doubles as a ground-truth decoder.

mod consistency;
mod corpus;
mod dtw;
mod render;
mod scripts;
pub mod skeleton;
mod style;

pub use consistency::{consistency_test, welch_one_sided, ConsistencyReport, WelchTest, ACCEPT_P_VALUE};
pub use corpus::{
    generate_corpus, generate_corpus_from, generate_shuffled_user, generate_shuffled_user_from, user_id,
    DatagenConfig,
    REPEATS_PER_LABEL,
};
pub use dtw::dtw_distance;
pub use render::{frame_count, latent_trajectory, pose_at, render_clip, LatentTrajectory, StyleInverse};
pub use scripts::{motion_library, MotionScript, Profile, PEAK_ANGULAR_RAD_S, PEAK_LINEAR_M_S, SCRIPT_DURATION_S};
pub use style::{generate_user_style, max_abs_cosine, StyleConfig, SyntheticUserStyle, MAX_ABS_COSINE, MAX_BASIS_ATTEMPTS};
