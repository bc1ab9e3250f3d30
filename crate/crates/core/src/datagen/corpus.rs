use cchp_autodiff::rng;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::render_clip;
use super::scripts::{motion_library, MotionScript};
use super::style::{generate_user_style, StyleConfig, SyntheticUserStyle};
use crate::domain::{
    Corpus, HandlingClip, MotionType, UserGroup, UserRecord, DEFAULT_RATE_HZ, OPERATION_DIM,
    TYPE1_PER_USER, TYPE2_PER_USER,
};
use crate::error::{Error, Result};

pub const REPEATS_PER_LABEL: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatagenConfig {
    pub rate_hz: f64,
    pub amplitude_jitter: f64,
    pub onset_jitter_s: f64,
    pub style: StyleConfig,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            rate_hz: DEFAULT_RATE_HZ,
            amplitude_jitter: 0.15,
            onset_jitter_s: 0.3,
            style: StyleConfig::default(),
        }
    }
}

pub fn user_id(index: usize) -> String {
    format!("u{index:02}")
}

fn check_library(lib: &[MotionScript]) -> Result<()> {
    let count = |t: MotionType| lib.iter().filter(|s| s.motion_type == t).count();
    let t1 = count(MotionType::Type1Translation);
    let r1 = count(MotionType::Type1Rotation);
    let t2 = count(MotionType::Type2Composite);
    let need = |clips: usize| clips / REPEATS_PER_LABEL;
    if t1 != need(TYPE1_PER_USER / 2) || r1 != need(TYPE1_PER_USER / 2) || t2 != need(TYPE2_PER_USER) {
        return Err(Error::CorpusInfeasible(format!(
            "library holds {t1} translation, {r1} rotation and {t2} composite scripts; \
             need {}, {} and {}",
            need(TYPE1_PER_USER / 2),
            need(TYPE1_PER_USER / 2),
            need(TYPE2_PER_USER)
        )));
    }
    if let Some(s) = lib.iter().find(|s| !s.is_well_typed()) {
        return Err(Error::CorpusInfeasible(format!("script {} has the wrong axis count", s.label)));
    }
    Ok(())
}

/// Renders every library script `REPEATS_PER_LABEL` times for one user.
/// `style_for` picks the style of clip `k`.
fn render_user(
    lib: &[MotionScript],
    cfg: &DatagenConfig,
    id: &str,
    seed: u64,
    mut style_for: impl FnMut(usize) -> Result<SyntheticUserStyle>,
) -> Result<Vec<HandlingClip>> {
    let mut clips = Vec::with_capacity(lib.len() * REPEATS_PER_LABEL);
    let mut k = 0;
    for rep in 0..REPEATS_PER_LABEL {
        for (li, script) in lib.iter().enumerate() {
            let mut r = rng::stream(seed, &[0xc1, li as u64, rep as u64]);
            let s = script.repetition(cfg.amplitude_jitter, cfg.onset_jitter_s, &mut r);
            let style = style_for(k)?;
            clips.push(render_clip(&style, &s, cfg.rate_hz, &format!("{id}-c{k:02}"), &mut r));
            k += 1;
        }
    }
    Ok(clips)
}

/// Generates `n_in_sample + n_out_sample` users, each with 72 clips, along
/// with the style that produced each user.
pub fn generate_corpus(
    n_in_sample: usize,
    n_out_sample: usize,
    seed: u64,
    cfg: &DatagenConfig,
) -> Result<(Corpus, Vec<SyntheticUserStyle>)> {
    generate_corpus_from(&motion_library(), n_in_sample, n_out_sample, seed, cfg)
}

pub fn generate_corpus_from(
    lib: &[MotionScript],
    n_in_sample: usize,
    n_out_sample: usize,
    seed: u64,
    cfg: &DatagenConfig,
) -> Result<(Corpus, Vec<SyntheticUserStyle>)> {
    check_library(lib)?;
    let users: Vec<(UserRecord, SyntheticUserStyle)> = (0..n_in_sample + n_out_sample)
        .into_par_iter()
        .map(|u| {
            let id = user_id(u);
            let user_seed = rng::child_seed(seed, &[0x05e2, u as u64]);
            let style = generate_user_style(&id, user_seed, &cfg.style)?;
            let clips = render_user(lib, cfg, &id, user_seed, |_| Ok(style.clone()))?;
            let group = if u < n_in_sample {
                UserGroup::InSample
            } else {
                UserGroup::OutSample
            };
            Ok((
                UserRecord {
                    user_id: id,
                    group,
                    clips,
                },
                style,
            ))
        })
        .collect::<Result<_>>()?;
    let (users, styles) = users.into_iter().unzip();
    Ok((
        Corpus {
            rate_hz: cfg.rate_hz,
            users,
        },
        styles,
    ))
}

/// A user without a consistent style: every clip is rendered with a freshly
/// drawn style whose axis patterns are also reassigned by a random signed
/// permutation.
pub fn generate_shuffled_user(id: &str, seed: u64, cfg: &DatagenConfig) -> Result<Vec<HandlingClip>> {
    generate_shuffled_user_from(&motion_library(), id, seed, cfg)
}

pub fn generate_shuffled_user_from(
    lib: &[MotionScript],
    id: &str,
    seed: u64,
    cfg: &DatagenConfig,
) -> Result<Vec<HandlingClip>> {
    check_library(lib)?;
    render_user(lib, cfg, id, seed, |k| {
        let mut r = rng::stream(seed, &[0x5f, k as u64]);
        let mut style = generate_user_style(id, r.next_u64(), &cfg.style)?;
        let mut order: Vec<usize> = (0..OPERATION_DIM).collect();
        order.shuffle(&mut r);
        let basis = order
            .iter()
            .map(|&d| {
                let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
                style.basis[d].iter().map(|v| sign * v).collect()
            })
            .collect();
        style.gains = order.iter().map(|&d| style.gains[d]).collect::<Vec<_>>().try_into().unwrap();
        style.basis = basis;
        Ok(style)
    })
}
