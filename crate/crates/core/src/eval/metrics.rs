use serde::{Deserialize, Serialize};

use crate::domain::OperationFrame;
use crate::error::{Error, Result};

pub const CM_PER_M: f64 = 100.0;
pub const DEFAULT_WINDOW_S: f64 = 5.0;

fn check_lengths(pred: &[OperationFrame], truth: &[OperationFrame]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predicted frames for {} reference frames",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(())
}

fn angular_error_norm(p: &OperationFrame, t: &OperationFrame) -> f64 {
    p.angular
        .iter()
        .zip(&t.angular)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Running sums from which both error metrics are pooled over clips.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSums {
    pub linear_sq: f64,
    pub angular_norm: f64,
    pub frames: usize,
}

impl ErrorSums {
    pub fn of(pred: &[OperationFrame], truth: &[OperationFrame]) -> Result<Self> {
        check_lengths(pred, truth)?;
        let mut s = Self::default();
        for (p, t) in pred.iter().zip(truth) {
            s.linear_sq += p.linear.iter().zip(&t.linear).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            s.angular_norm += angular_error_norm(p, t);
            s.frames += 1;
        }
        Ok(s)
    }

    pub fn add(&mut self, other: &Self) {
        self.linear_sq += other.linear_sq;
        self.angular_norm += other.angular_norm;
        self.frames += other.frames;
    }

    /// Root mean squared linear-velocity error over frames and axes, in cm/s.
    pub fn rmse_translation(&self) -> f64 {
        (self.linear_sq / (3 * self.frames) as f64).sqrt() * CM_PER_M
    }

    /// Mean norm of the angular-velocity error, in deg/s.
    pub fn mean_rotation_error(&self) -> f64 {
        (self.angular_norm / self.frames as f64).to_degrees()
    }
}

pub fn rmse_translation(pred: &[OperationFrame], truth: &[OperationFrame]) -> Result<f64> {
    Ok(ErrorSums::of(pred, truth)?.rmse_translation())
}

pub fn mean_rotation_error(pred: &[OperationFrame], truth: &[OperationFrame]) -> Result<f64> {
    Ok(ErrorSums::of(pred, truth)?.mean_rotation_error())
}

/// Angular-velocity error norm integrated over the first `window_s` seconds
/// of a clip sampled every `dt` seconds, in degrees.
pub fn cumulative_rotation_error(
    pred: &[OperationFrame],
    truth: &[OperationFrame],
    dt: f64,
    window_s: f64,
) -> Result<f64> {
    check_lengths(pred, truth)?;
    let span = pred.len() as f64 * dt;
    let frames = (window_s / dt).round() as usize;
    if frames > pred.len() || frames == 0 {
        return Err(Error::ClipTooShort { span, window: window_s });
    }
    let total: f64 = pred[..frames]
        .iter()
        .zip(truth)
        .map(|(p, t)| angular_error_norm(p, t) * dt)
        .sum();
    Ok(total.to_degrees())
}

/// Distribution of per-clip cumulative errors. The top decile holds the
/// worst `ceil(n / 10)` clips in ascending order; `p90` is its smallest value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CumulativeErrors {
    pub per_clip: Vec<f64>,
    pub p90: f64,
    pub top_decile: Vec<f64>,
}

impl CumulativeErrors {
    pub fn from_values(mut per_clip: Vec<f64>) -> Result<Self> {
        if per_clip.is_empty() {
            return Err(Error::InsufficientData("no clips for the error distribution".into()));
        }
        let mut sorted = per_clip.clone();
        sorted.sort_by(f64::total_cmp);
        let top = sorted.len().div_ceil(10);
        let top_decile = sorted.split_off(sorted.len() - top);
        let p90 = top_decile[0];
        per_clip.shrink_to_fit();
        Ok(Self {
            per_clip,
            p90,
            top_decile,
        })
    }

    /// Counts per `width`-degree bin starting at zero.
    pub fn histogram(&self, width: f64) -> Vec<(f64, f64, usize)> {
        let max = self.per_clip.iter().copied().fold(0.0, f64::max);
        let bins = ((max / width).floor() as usize) + 1;
        let mut counts = vec![0; bins];
        for &v in &self.per_clip {
            counts[((v / width).floor() as usize).min(bins - 1)] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(i, c)| (i as f64 * width, (i + 1) as f64 * width, c))
            .collect()
    }
}
