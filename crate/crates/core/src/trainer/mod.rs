//! Episode construction and the optimization loop.
//!
//! An epoch visits every training clip once as a target, interleaving
//! users round-robin. Consecutive targets form batches; each batch is split
//! into fixed micro-batches whose gradients are summed in order, so results
//! do not depend on how many worker threads run them.

mod config;
mod episode;

use std::io::{Read, Write};

use cchp_autodiff::{rng, Gradients, ParameterStore};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{p_tf_at, TeacherSchedule, TrainConfig};
pub use episode::{
    episode_for_target, perturb_gestures, resample_target, sample_episode, select_context, Episode, MAX_TARGET_RETRIES,
};

use crate::baselines::LstmRegressor;
use crate::domain::{ClipKey, ContextSet, HandlingClip, TargetSet};
use crate::error::{Error, Result};
use crate::model::{CchpModel, ElboDiagnostics, EpisodeNoise};
use crate::models::AnyModel;

/// A model the loop can optimize.
pub trait Trainable: Sync {
    fn params_mut(&mut self) -> &mut ParameterStore;
    fn uses_context(&self) -> bool;
    fn latent_dim(&self) -> usize;
    /// Summed loss and gradients over `episodes`, which share their shapes.
    fn group_gradients(&self, episodes: &[&Episode], noise: &[EpisodeNoise]) -> Result<(ElboDiagnostics, Gradients)>;
}

impl Trainable for CchpModel {
    fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    fn uses_context(&self) -> bool {
        true
    }

    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn group_gradients(&self, episodes: &[&Episode], noise: &[EpisodeNoise]) -> Result<(ElboDiagnostics, Gradients)> {
        let pairs: Vec<_> = episodes.iter().map(|e| (&e.context, &e.target)).collect();
        let batch = self.prepare(&pairs)?;
        self.batch_gradients(&batch, noise)
    }
}

impl Trainable for LstmRegressor {
    fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    fn uses_context(&self) -> bool {
        false
    }

    fn latent_dim(&self) -> usize {
        0
    }

    fn group_gradients(&self, episodes: &[&Episode], _: &[EpisodeNoise]) -> Result<(ElboDiagnostics, Gradients)> {
        let pairs = episodes
            .iter()
            .map(|e| {
                let ops = e.target.operations.as_deref().ok_or(Error::MissingLabels)?;
                Ok((e.target.gestures.as_slice(), ops))
            })
            .collect::<Result<Vec<_>>>()?;
        self.batch_gradients(&self.prepare(&pairs)?)
    }
}

impl Trainable for AnyModel {
    fn params_mut(&mut self) -> &mut ParameterStore {
        match self {
            AnyModel::Cchp(m) => m.params_mut(),
            AnyModel::Lstm(m) => m.params_mut(),
        }
    }

    fn uses_context(&self) -> bool {
        matches!(self, AnyModel::Cchp(_))
    }

    fn latent_dim(&self) -> usize {
        match self {
            AnyModel::Cchp(m) => m.latent_dim(),
            AnyModel::Lstm(m) => m.latent_dim(),
        }
    }

    fn group_gradients(&self, episodes: &[&Episode], noise: &[EpisodeNoise]) -> Result<(ElboDiagnostics, Gradients)> {
        match self {
            AnyModel::Cchp(m) => m.group_gradients(episodes, noise),
            AnyModel::Lstm(m) => m.group_gradients(episodes, noise),
        }
    }
}

/// Per-step training losses averaged over the batch's episodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub nll: f64,
    pub kl: f64,
    pub p_tf: f64,
}

pub fn write_history<W: Write>(w: W, history: &[LossRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in history {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_history<R: Read>(r: R) -> Result<Vec<LossRecord>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub enum TrainEvent<'a, M> {
    Step(&'a LossRecord),
    /// Periodic checkpoint after `step` updates.
    Checkpoint { model: &'a M, step: usize },
    /// The last good parameters; the update at `step` produced non-finite values.
    Diverged { model: &'a M, step: usize },
}

/// Groups clips by user, keeping the order in which users first appear.
pub fn clips_by_user<'a>(clips: &[&'a HandlingClip]) -> Vec<Vec<&'a HandlingClip>> {
    let mut ids: Vec<&str> = Vec::new();
    let mut groups: Vec<Vec<&'a HandlingClip>> = Vec::new();
    for &c in clips {
        match ids.iter().position(|&u| u == c.user_id) {
            Some(i) => groups[i].push(c),
            None => {
                ids.push(&c.user_id);
                groups.push(vec![c]);
            }
        }
    }
    groups
}

/// Round-robin target order of one epoch: `(user, clip)` indices.
fn epoch_order(users: &[Vec<&HandlingClip>], seed: u64, epoch: usize) -> Vec<(usize, usize)> {
    let perms: Vec<Vec<usize>> = users
        .iter()
        .enumerate()
        .map(|(u, clips)| {
            let mut p: Vec<usize> = (0..clips.len()).collect();
            p.shuffle(&mut rng::stream(seed, &[0x5e, epoch as u64, u as u64]));
            p
        })
        .collect();
    let longest = perms.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest)
        .flat_map(|round| {
            perms
                .iter()
                .enumerate()
                .filter_map(move |(u, p)| p.get(round).map(|&c| (u, c)))
        })
        .collect()
}

pub fn steps_per_epoch(num_targets: usize, batch_size: usize) -> usize {
    num_targets.div_ceil(batch_size)
}

struct Prepared {
    episode: Episode,
    noise: EpisodeNoise,
}

fn prepare_episode<M: Trainable>(
    model: &M,
    users: &[Vec<&HandlingClip>],
    (u, c): (usize, usize),
    cfg: &TrainConfig,
    p_tf: f64,
    mut r: impl rand::Rng,
) -> Result<Prepared> {
    let clips = &users[u];
    let mut episode = if model.uses_context() {
        let matched = r.random_bool(cfg.p_m);
        match episode_for_target(clips, c, cfg.context_clips, matched, &mut r) {
            // Keep the drawn match flag and move to another target.
            Err(Error::EpisodeInfeasible(_)) => resample_target(clips, cfg.context_clips, matched, &mut r)?,
            other => other?,
        }
    } else {
        let t = clips[c];
        Episode {
            context: ContextSet {
                user_id: t.user_id.clone(),
                gestures: Vec::new(),
                operations: Vec::new(),
            },
            target: TargetSet::from_clip(t),
            target_key: ClipKey::of(t),
            context_keys: Vec::new(),
            matched: false,
        }
    };
    episode.context.gestures = perturb_gestures(&episode.context.gestures, cfg.noise_variance, &mut r);
    episode.target.gestures = perturb_gestures(&episode.target.gestures, cfg.noise_variance, &mut r);
    let noise = EpisodeNoise::draw(&mut r, model.latent_dim(), episode.target.len(), p_tf);
    Ok(Prepared { episode, noise })
}

/// Consecutive runs of equal-shaped episodes, at most `cap` long.
fn micro_groups(batch: &[Prepared], cap: usize) -> Vec<std::ops::Range<usize>> {
    let shape = |p: &Prepared| (p.episode.context.len(), p.episode.target.len());
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=batch.len() {
        if i == batch.len() || i - start == cap || shape(&batch[i]) != shape(&batch[start]) {
            out.push(start..i);
            start = i;
        }
    }
    out
}

/// Optimizes `model` on `train`. Returns the per-step loss history.
pub fn train<M: Trainable>(
    model: &mut M,
    train: &[&HandlingClip],
    cfg: &TrainConfig,
    mut observe: impl FnMut(TrainEvent<'_, M>) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    let users = clips_by_user(train);
    if users.is_empty() {
        return Err(Error::InsufficientData("empty training split".into()));
    }
    if model.uses_context() {
        if let Some(u) = users.iter().find(|u| u.len() <= cfg.context_clips) {
            return Err(Error::EpisodeInfeasible(format!(
                "user {} has {} training clips; need more than {}",
                u[0].user_id,
                u.len(),
                cfg.context_clips
            )));
        }
    }
    let per_epoch = steps_per_epoch(train.len(), cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut history = Vec::with_capacity(total);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(&users, cfg.seed, epoch);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let p_tf = p_tf_at(step, total, cfg);
            let m: &M = model;
            let prepared = chunk
                .par_iter()
                .enumerate()
                .map(|(i, &target)| {
                    let r = rng::stream(cfg.seed, &[0x7e, epoch as u64, (b * cfg.batch_size + i) as u64]);
                    prepare_episode(m, &users, target, cfg, p_tf, r)
                })
                .collect::<Result<Vec<_>>>()?;
            let groups = micro_groups(&prepared, cfg.micro_batch);
            let parts = groups
                .par_iter()
                .map(|g| {
                    let eps: Vec<&Episode> = prepared[g.clone()].iter().map(|p| &p.episode).collect();
                    let noise: Vec<EpisodeNoise> = prepared[g.clone()].iter().map(|p| p.noise.clone()).collect();
                    m.group_gradients(&eps, &noise)
                })
                .collect::<Result<Vec<_>>>();
            let parts = match parts {
                Err(Error::Numeric(_)) => {
                    observe(TrainEvent::Diverged { model, step })?;
                    return Err(Error::TrainingDiverged { step: step as u64 });
                }
                other => other?,
            };
            let mut grads = Gradients::default();
            let (mut nll, mut kl) = (0.0, 0.0);
            for (d, g) in &parts {
                nll += d.nll;
                kl += d.kl;
                grads.merge(g);
            }
            let n = prepared.len() as f64;
            grads.scale(1.0 / n);
            let record = LossRecord {
                step,
                nll: nll / n,
                kl: kl / n,
                p_tf,
            };
            if !(record.nll.is_finite() && record.kl.is_finite() && grads.all_finite()) {
                observe(TrainEvent::Diverged { model, step })?;
                return Err(Error::TrainingDiverged { step: step as u64 });
            }
            model.params_mut().adam_step(&grads, cfg.lr)?;
            observe(TrainEvent::Step(&record))?;
            history.push(record);
            step += 1;
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                observe(TrainEvent::Checkpoint { model, step })?;
            }
        }
    }
    Ok(history)
}
