//! Test settings, error metrics and the evaluation driver.

mod metrics;
mod noise;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use cchp_autodiff::rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{
    cumulative_rotation_error, mean_rotation_error, rmse_translation, CumulativeErrors, ErrorSums, CM_PER_M,
    DEFAULT_WINDOW_S,
};
pub use noise::{apply_test_noise, SIGMA_R_RAD, SIGMA_T_M};

use crate::baselines::{motion_cloning_sequence, DEFAULT_GAIN};
use crate::datagen::{StyleInverse, SyntheticUserStyle};
use crate::domain::{Corpus, ContextSet, GestureFrame, HandlingClip, OperationFrame, SplitSpec};
use crate::error::{Error, Result};
use crate::model::StreamSession;
use crate::models::AnyModel;
use crate::trainer::{clips_by_user, select_context};

/// Rows decoded together in one inference session.
const EVAL_ROWS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvalSetting {
    MatchingContext,
    MismatchingMotion,
    NewUser,
    NoisyInput,
}

impl EvalSetting {
    pub const ALL: [EvalSetting; 4] = [
        EvalSetting::MatchingContext,
        EvalSetting::MismatchingMotion,
        EvalSetting::NewUser,
        EvalSetting::NoisyInput,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalSetting::MatchingContext => "matching",
            EvalSetting::MismatchingMotion => "mismatching",
            EvalSetting::NewUser => "new-user",
            EvalSetting::NoisyInput => "noisy",
        }
    }

    fn tag(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for EvalSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown setting `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub seed: u64,
    pub context_clips: usize,
    /// Use the context posterior mean instead of sampling the latent.
    pub deterministic: bool,
    pub sigma_t: f64,
    pub sigma_r: f64,
    pub window_s: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            context_clips: 4,
            deterministic: true,
            sigma_t: SIGMA_T_M,
            sigma_r: SIGMA_R_RAD,
            window_s: DEFAULT_WINDOW_S,
        }
    }
}

/// One target clip to predict, with the context it is evaluated under.
#[derive(Clone, Debug)]
pub struct EvalCase {
    pub user_id: String,
    pub clip_id: String,
    pub context: ContextSet,
    pub gestures: Vec<GestureFrame>,
    pub truth: Vec<OperationFrame>,
    pub dt: f64,
}

/// Assembles the cases of one setting.
///
/// Matching and noisy cases are the in-sample test clips whose label also
/// occurs in the user's training clips, with a training context that
/// contains that label. Mismatching cases are the in-sample test clips
/// whose label never occurs in the user's training clips. New-user cases
/// are out-of-sample clips whose context is drawn from the same user's
/// other clips.
pub fn build_cases(corpus: &Corpus, split: &SplitSpec, setting: EvalSetting, opts: &EvalOptions) -> Result<Vec<EvalCase>> {
    let train = split.train_clips(corpus);
    let train_by_user: HashMap<&str, Vec<&HandlingClip>> = clips_by_user(&train)
        .into_iter()
        .map(|g| (g[0].user_id.as_str(), g))
        .collect();
    let targets: Vec<(&HandlingClip, Vec<&HandlingClip>, Option<bool>)> = match setting {
        EvalSetting::NewUser => {
            let out = split.test_out_clips(corpus);
            let by_user = clips_by_user(&out);
            by_user
                .iter()
                .flat_map(|clips| {
                    clips.iter().map(move |&t| {
                        let pool = clips.iter().copied().filter(|c| c.clip_id != t.clip_id).collect();
                        (t, pool, None)
                    })
                })
                .collect()
        }
        _ => {
            let want_match = setting != EvalSetting::MismatchingMotion;
            split
                .test_in_clips(corpus)
                .into_iter()
                .filter_map(|t| {
                    let pool = train_by_user.get(t.user_id.as_str())?.clone();
                    let seen: HashSet<&str> = pool.iter().map(|c| c.motion_label.as_str()).collect();
                    (seen.contains(t.motion_label.as_str()) == want_match).then_some((t, pool, Some(want_match)))
                })
                .collect()
        }
    };
    if targets.is_empty() {
        return Err(Error::InsufficientData(format!("no test clips for the {setting} setting")));
    }
    // Noisy cases reuse the matching contexts so the two settings differ only in the noise.
    let context_tag = match setting {
        EvalSetting::NoisyInput => EvalSetting::MatchingContext.tag(),
        s => s.tag(),
    };
    targets
        .into_iter()
        .enumerate()
        .map(|(i, (t, pool, matched))| {
            let mut r = rng::stream(opts.seed, &[0xe5, context_tag, i as u64]);
            let ctx = select_context(&pool, &t.motion_label, opts.context_clips, matched, &mut r)?;
            let gestures = if setting == EvalSetting::NoisyInput {
                let mut nr = rng::stream(opts.seed, &[0xe6, i as u64]);
                apply_test_noise(&t.gestures, opts.sigma_t, opts.sigma_r, &mut nr)
            } else {
                t.gestures.clone()
            };
            Ok(EvalCase {
                user_id: t.user_id.clone(),
                clip_id: t.clip_id.clone(),
                context: ContextSet::from_clips(ctx)?,
                gestures,
                truth: t.operations.clone(),
                dt: t.dt(),
            })
        })
        .collect()
}

/// A policy under evaluation.
pub enum Evaluated {
    Trained { label: String, model: AnyModel },
    MotionCloning { gain: f64 },
    /// Exact inverse of the generator, given every user's style.
    Oracle { styles: Vec<SyntheticUserStyle>, rate_hz: f64 },
}

impl Evaluated {
    pub fn motion_cloning() -> Self {
        Evaluated::MotionCloning { gain: DEFAULT_GAIN }
    }

    pub fn label(&self) -> &str {
        match self {
            Evaluated::Trained { label, .. } => label,
            Evaluated::MotionCloning { .. } => "mc",
            Evaluated::Oracle { .. } => "oracle",
        }
    }

    /// Context-free policies have no mismatching-motion result.
    pub fn supports(&self, setting: EvalSetting) -> bool {
        let context_free = matches!(
            self,
            Evaluated::MotionCloning { .. } | Evaluated::Trained { model: AnyModel::Lstm(_), .. }
        );
        !(context_free && setting == EvalSetting::MismatchingMotion)
    }

    pub fn predict(&self, cases: &[EvalCase], opts: &EvalOptions) -> Result<Vec<Vec<OperationFrame>>> {
        match self {
            Evaluated::MotionCloning { gain } => cases
                .par_iter()
                .map(|c| motion_cloning_sequence(&c.gestures, *gain))
                .collect(),
            Evaluated::Oracle { styles, rate_hz } => {
                let inverses: HashMap<&str, StyleInverse> = styles
                    .iter()
                    .map(|s| Ok((s.user_id.as_str(), StyleInverse::new(s)?)))
                    .collect::<Result<_>>()?;
                cases
                    .iter()
                    .map(|c| {
                        let inv = inverses
                            .get(c.user_id.as_str())
                            .ok_or_else(|| Error::MissingModel(format!("no style for user {}", c.user_id)))?;
                        Ok(inv
                            .velocities(&c.gestures, *rate_hz)
                            .iter()
                            .map(|v| OperationFrame::from_slice(v))
                            .collect())
                    })
                    .collect()
            }
            Evaluated::Trained { model, .. } => predict_trained(model, cases, opts),
        }
    }
}

/// Chunks of consecutive cases sharing context and target lengths.
fn shape_groups(cases: &[EvalCase], cap: usize) -> Vec<std::ops::Range<usize>> {
    let shape = |c: &EvalCase| (c.context.len(), c.gestures.len());
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=cases.len() {
        if i == cases.len() || i - start == cap || shape(&cases[i]) != shape(&cases[start]) {
            out.push(start..i);
            start = i;
        }
    }
    out
}

fn predict_trained(model: &AnyModel, cases: &[EvalCase], opts: &EvalOptions) -> Result<Vec<Vec<OperationFrame>>> {
    let groups = shape_groups(cases, EVAL_ROWS);
    let parts = groups
        .par_iter()
        .map(|g| -> Result<Vec<Vec<OperationFrame>>> {
            let cs = &cases[g.clone()];
            match model {
                AnyModel::Lstm(m) => m.predict(&cs.iter().map(|c| c.gestures.as_slice()).collect::<Vec<_>>()),
                AnyModel::Cchp(m) => {
                    let mut s = StreamSession::new(m);
                    let ctx: Vec<&ContextSet> = cs.iter().map(|c| &c.context).collect();
                    s.start(&ctx, &mut rng::stream(opts.seed, &[0xd0, g.start as u64]), opts.deterministic)?;
                    let mut out = vec![Vec::with_capacity(cs[0].gestures.len()); cs.len()];
                    for t in 0..cs[0].gestures.len() {
                        let frames: Vec<&GestureFrame> = cs.iter().map(|c| &c.gestures[t]).collect();
                        for (row, p) in out.iter_mut().zip(s.step(&frames)?) {
                            row.push(OperationFrame::from_slice(&p.mean));
                        }
                    }
                    Ok(out)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub user_id: String,
    pub clip_id: String,
    pub rmse_cm_s: f64,
    pub rot_deg_s: f64,
    pub cumulative_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub setting: EvalSetting,
    pub rmse_translation: f64,
    pub mean_rotation_error: f64,
    pub clips: Vec<ClipMetrics>,
    pub cumulative: CumulativeErrors,
}

/// Pools the errors of `preds` against the cases' reference operations.
pub fn score(
    model: &str,
    setting: EvalSetting,
    cases: &[EvalCase],
    preds: &[Vec<OperationFrame>],
    window_s: f64,
) -> Result<MetricsReport> {
    if cases.len() != preds.len() {
        return Err(Error::Shape(format!("{} predictions for {} cases", preds.len(), cases.len())));
    }
    let mut total = ErrorSums::default();
    let mut clips = Vec::with_capacity(cases.len());
    for (c, p) in cases.iter().zip(preds) {
        let s = ErrorSums::of(p, &c.truth)?;
        total.add(&s);
        clips.push(ClipMetrics {
            user_id: c.user_id.clone(),
            clip_id: c.clip_id.clone(),
            rmse_cm_s: s.rmse_translation(),
            rot_deg_s: s.mean_rotation_error(),
            cumulative_deg: cumulative_rotation_error(p, &c.truth, c.dt, window_s)?,
        });
    }
    Ok(MetricsReport {
        model: model.to_string(),
        setting,
        rmse_translation: total.rmse_translation(),
        mean_rotation_error: total.mean_rotation_error(),
        cumulative: CumulativeErrors::from_values(clips.iter().map(|c| c.cumulative_deg).collect())?,
        clips,
    })
}

/// One cell of the results table; `None` marks a setting the policy does not support.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub model: String,
    pub setting: EvalSetting,
    pub report: Option<MetricsReport>,
}

pub fn run_evaluation(
    models: &[Evaluated],
    corpus: &Corpus,
    split: &SplitSpec,
    settings: &[EvalSetting],
    opts: &EvalOptions,
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::with_capacity(models.len() * settings.len());
    for &setting in settings {
        let cases = build_cases(corpus, split, setting, opts)?;
        for m in models {
            let report = if m.supports(setting) {
                let preds = m.predict(&cases, opts)?;
                Some(score(m.label(), setting, &cases, &preds, opts.window_s)?)
            } else {
                None
            };
            rows.push(EvalRow {
                model: m.label().to_string(),
                setting,
                report,
            });
        }
    }
    rows.sort_by_key(|r| models.iter().position(|m| m.label() == r.model));
    Ok(rows)
}

pub fn find<'a>(rows: &'a [EvalRow], model: &str, setting: EvalSetting) -> Option<&'a MetricsReport> {
    rows.iter()
        .find(|r| r.model == model && r.setting == setting)
        .and_then(|r| r.report.as_ref())
}

#[derive(Serialize)]
struct ReportLine<'a> {
    model: &'a str,
    setting: &'a str,
    rmse_cm_s: String,
    rot_deg_s: String,
}

/// Results table with columns `model, setting, rmse_cm_s, rot_deg_s`.
pub fn write_report<W: Write>(w: W, rows: &[EvalRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        let (a, b) = match &r.report {
            Some(m) => (m.rmse_translation.to_string(), m.mean_rotation_error.to_string()),
            None => ("NA".to_string(), "NA".to_string()),
        };
        out.serialize(ReportLine {
            model: &r.model,
            setting: r.setting.as_str(),
            rmse_cm_s: a,
            rot_deg_s: b,
        })?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct HistogramLine<'a> {
    model: &'a str,
    setting: &'a str,
    bin_lo_deg: f64,
    bin_hi_deg: f64,
    count: usize,
    top_decile_threshold_deg: f64,
}

/// Cumulative rotation error histograms, one block per reported cell.
pub fn write_histograms<W: Write>(w: W, rows: &[EvalRow], bin_deg: f64) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        let Some(m) = &r.report else { continue };
        for (lo, hi, count) in m.cumulative.histogram(bin_deg) {
            out.serialize(HistogramLine {
                model: &r.model,
                setting: r.setting.as_str(),
                bin_lo_deg: lo,
                bin_hi_deg: hi,
                count,
                top_decile_threshold_deg: m.cumulative.p90,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}
