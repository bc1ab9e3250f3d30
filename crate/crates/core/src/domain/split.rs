use std::collections::BTreeMap;

use cchp_autodiff::rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Corpus, HandlingClip, MotionType, UserGroup};
use crate::error::{Error, Result};

pub const TYPE1_PER_USER: usize = 24;
pub const TYPE2_PER_USER: usize = 48;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClipKey {
    pub user: String,
    pub clip: String,
}

impl ClipKey {
    pub fn of(clip: &HandlingClip) -> Self {
        Self {
            user: clip.user_id.clone(),
            clip: clip.clip_id.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train: Vec<ClipKey>,
    pub test_in_sample: Vec<ClipKey>,
    pub test_out_sample: Vec<ClipKey>,
}

impl SplitSpec {
    pub fn train_clips<'a>(&self, corpus: &'a Corpus) -> Vec<&'a HandlingClip> {
        resolve(corpus, &self.train)
    }

    pub fn test_in_clips<'a>(&self, corpus: &'a Corpus) -> Vec<&'a HandlingClip> {
        resolve(corpus, &self.test_in_sample)
    }

    pub fn test_out_clips<'a>(&self, corpus: &'a Corpus) -> Vec<&'a HandlingClip> {
        resolve(corpus, &self.test_out_sample)
    }
}

fn resolve<'a>(corpus: &'a Corpus, keys: &[ClipKey]) -> Vec<&'a HandlingClip> {
    keys.iter().filter_map(|k| corpus.clip(k)).collect()
}

/// Finds a subset of `sizes` summing to `target`, preferring earlier entries.
fn subset_with_sum(sizes: &[usize], target: usize) -> Option<Vec<usize>> {
    // reach[i][s]: the first i entries can reach sum s
    let n = sizes.len();
    let mut reach = vec![vec![false; target + 1]; n + 1];
    reach[n][0] = true;
    for i in (0..n).rev() {
        for s in 0..=target {
            reach[i][s] = reach[i + 1][s] || (s >= sizes[i] && reach[i + 1][s - sizes[i]]);
        }
    }
    if !reach[0][target] {
        return None;
    }
    let mut picked = Vec::new();
    let mut s = target;
    for i in 0..n {
        if s >= sizes[i] && reach[i + 1][s - sizes[i]] {
            picked.push(i);
            s -= sizes[i];
        }
    }
    Some(picked)
}

/// Splits the clips of one motion type in half so that exactly half of the
/// test clips carry a label that also appears in train.
fn split_type(
    clips: &[&HandlingClip],
    rng: &mut rng::StreamRng,
    what: &str,
) -> Result<(Vec<ClipKey>, Vec<ClipKey>)> {
    let n = clips.len();
    let half = n / 2;
    let novel = half / 2;
    let mut by_label: BTreeMap<&str, Vec<&HandlingClip>> = BTreeMap::new();
    for c in clips {
        by_label.entry(c.motion_label.as_str()).or_default().push(c);
    }
    let mut labels: Vec<Vec<&HandlingClip>> = by_label.into_values().collect();
    labels.shuffle(rng);
    for l in labels.iter_mut() {
        l.shuffle(rng);
    }
    let sizes: Vec<usize> = labels.iter().map(Vec::len).collect();
    let held = subset_with_sum(&sizes, novel).ok_or_else(|| {
        Error::SplitInfeasible(format!("{what}: no label subset covers {novel} clips"))
    })?;
    let mut train = Vec::with_capacity(half);
    let mut test = Vec::with_capacity(half);
    let mut pool = Vec::new();
    for (i, group) in labels.iter().enumerate() {
        if held.contains(&i) {
            test.extend(group.iter().map(|c| ClipKey::of(c)));
        } else {
            train.push(ClipKey::of(group[0]));
            pool.extend(group[1..].iter().map(|c| ClipKey::of(c)));
        }
    }
    if train.len() > half || pool.len() < half - novel {
        return Err(Error::SplitInfeasible(format!(
            "{what}: {} shared labels cannot fit {half} training clips",
            train.len()
        )));
    }
    pool.shuffle(rng);
    let overlap = half - novel;
    test.extend(pool.drain(..overlap));
    train.extend(pool);
    Ok((train, test))
}

/// Partitions a corpus into training, in-sample test and out-of-sample test
/// sets. Each in-sample user contributes half of each motion type to train;
/// within each type, half of the test clips reuse a label seen in train and
/// the other half use labels the user never trains on.
pub fn split_corpus(corpus: &Corpus, seed: u64) -> Result<SplitSpec> {
    let mut spec = SplitSpec {
        seed,
        ..Default::default()
    };
    for (ui, user) in corpus.users.iter().enumerate() {
        if user.group == UserGroup::OutSample {
            spec.test_out_sample
                .extend(user.clips.iter().map(ClipKey::of));
            continue;
        }
        let mut r = rng::stream(seed, &[0x5911, ui as u64]);
        let t1: Vec<&HandlingClip> = user.clips.iter().filter(|c| c.motion_type.is_type1()).collect();
        let t2: Vec<&HandlingClip> = user
            .clips
            .iter()
            .filter(|c| c.motion_type == MotionType::Type2Composite)
            .collect();
        if t1.len() != TYPE1_PER_USER || t2.len() != TYPE2_PER_USER {
            return Err(Error::SplitInfeasible(format!(
                "user {} has {} Type1 and {} Type2 clips, expected {TYPE1_PER_USER} and {TYPE2_PER_USER}",
                user.user_id,
                t1.len(),
                t2.len()
            )));
        }
        for (clips, what) in [(t1, "Type1"), (t2, "Type2")] {
            let (train, test) = split_type(&clips, &mut r, &format!("user {} {what}", user.user_id))?;
            spec.train.extend(train);
            spec.test_in_sample.extend(test);
        }
    }
    Ok(spec)
}
