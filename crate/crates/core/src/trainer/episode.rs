use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::domain::{ClipKey, ContextSet, GestureFrame, HandlingClip, TargetSet};
use crate::error::{Error, Result};

pub const MAX_TARGET_RETRIES: usize = 100;

/// A context/target split of one user's clips.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub context: ContextSet,
    pub target: TargetSet,
    pub target_key: ClipKey,
    pub context_keys: Vec<ClipKey>,
    /// Whether the target's motion label appears in the context.
    pub matched: bool,
}

/// Picks `k` clips of `pool` in random order. `matched` of `Some(true)`
/// requires at least one clip labelled `label`, `Some(false)` excludes
/// them, and `None` draws without constraint.
pub fn select_context<'a>(
    pool: &[&'a HandlingClip],
    label: &str,
    k: usize,
    matched: Option<bool>,
    r: &mut impl Rng,
) -> Result<Vec<&'a HandlingClip>> {
    let (same, other): (Vec<usize>, Vec<usize>) = (0..pool.len()).partition(|&i| pool[i].motion_label == label);
    let mut chosen: Vec<usize> = match matched {
        Some(true) => {
            let Some(&anchor) = same.choose(r) else {
                return Err(Error::EpisodeInfeasible(format!("no context clip of label {label}")));
            };
            let rest: Vec<usize> = (0..pool.len()).filter(|&i| i != anchor).collect();
            if rest.len() + 1 < k {
                return Err(Error::EpisodeInfeasible(format!("fewer than {k} context clips")));
            }
            let mut c: Vec<usize> = rest.choose_multiple(r, k - 1).copied().collect();
            c.push(anchor);
            c
        }
        Some(false) => {
            if other.len() < k {
                return Err(Error::EpisodeInfeasible(format!("fewer than {k} clips without label {label}")));
            }
            other.choose_multiple(r, k).copied().collect()
        }
        None => {
            if pool.len() < k {
                return Err(Error::EpisodeInfeasible(format!("fewer than {k} context clips")));
            }
            (0..pool.len()).collect::<Vec<_>>().choose_multiple(r, k).copied().collect()
        }
    };
    chosen.shuffle(r);
    Ok(chosen.into_iter().map(|i| pool[i]).collect())
}

/// Builds an episode around `clips[target]` with context drawn from the
/// remaining clips. When `matched`, at least one context clip shares the
/// target's label; otherwise none does.
pub fn episode_for_target(
    clips: &[&HandlingClip],
    target: usize,
    k: usize,
    matched: bool,
    r: &mut impl Rng,
) -> Result<Episode> {
    let t = clips[target];
    let pool: Vec<&HandlingClip> = (0..clips.len()).filter(|&i| i != target).map(|i| clips[i]).collect();
    let ctx = select_context(&pool, &t.motion_label, k, Some(matched), r)?;
    Ok(Episode {
        context: ContextSet::from_clips(ctx.iter().copied())?,
        target: TargetSet::from_clip(t),
        target_key: ClipKey::of(t),
        context_keys: ctx.iter().map(|c| ClipKey::of(c)).collect(),
        matched,
    })
}

/// Draws a target uniformly from one user's clips and a context of `k`
/// other clips that contains the target's label with probability `p_m`.
pub fn sample_episode(clips: &[&HandlingClip], k: usize, p_m: f64, r: &mut impl Rng) -> Result<Episode> {
    if clips.len() <= k {
        return Err(Error::EpisodeInfeasible(format!("{} clips cannot hold {k} context clips and a target", clips.len())));
    }
    let matched = r.random_bool(p_m);
    resample_target(clips, k, matched, r)
}

/// Draws targets uniformly until one admits the requested context kind.
pub fn resample_target(clips: &[&HandlingClip], k: usize, matched: bool, r: &mut impl Rng) -> Result<Episode> {
    for _ in 0..MAX_TARGET_RETRIES {
        let target = r.random_range(0..clips.len());
        match episode_for_target(clips, target, k, matched, r) {
            Err(Error::EpisodeInfeasible(_)) => continue,
            other => return other,
        }
    }
    Err(Error::EpisodeInfeasible(format!(
        "no target admits a {} context after {MAX_TARGET_RETRIES} draws",
        if matched { "matching" } else { "mismatching" }
    )))
}

/// Adds i.i.d. zero-mean Gaussian noise of the given variance to every coordinate.
pub fn perturb_gestures(gestures: &[GestureFrame], variance: f64, r: &mut impl Rng) -> Vec<GestureFrame> {
    if variance <= 0.0 {
        return gestures.to_vec();
    }
    let n = Normal::new(0.0, variance.sqrt()).expect("positive variance");
    gestures
        .iter()
        .map(|g| GestureFrame {
            timestamp: g.timestamp,
            keypoints: g.keypoints.iter().map(|v| v + n.sample(r)).collect(),
        })
        .collect()
}
