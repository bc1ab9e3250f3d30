use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::dtw::dtw_distance;
use crate::domain::HandlingClip;
use crate::error::{Error, Result};

pub const ACCEPT_P_VALUE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// P(T > t) under the null of equal means.
    pub p_value: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// One-sided Welch test of `mean(smaller) < mean(larger)`.
pub fn welch_one_sided(smaller: &[f64], larger: &[f64]) -> Result<WelchTest> {
    if smaller.len() < 2 || larger.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 samples per group, got {} and {}",
            smaller.len(),
            larger.len()
        )));
    }
    let (ms, vs) = mean_var(smaller);
    let (ml, vl) = mean_var(larger);
    let (ns, nl) = (smaller.len() as f64, larger.len() as f64);
    let (as_, al) = (vs / ns, vl / nl);
    let se2 = as_ + al;
    if se2 == 0.0 {
        let p = match ml.partial_cmp(&ms) {
            Some(std::cmp::Ordering::Greater) => 0.0,
            Some(std::cmp::Ordering::Less) => 1.0,
            _ => 0.5,
        };
        return Ok(WelchTest {
            t: 0.0,
            df: ns + nl - 2.0,
            p_value: p,
        });
    }
    let t = (ml - ms) / se2.sqrt();
    let df = se2 * se2 / (as_ * as_ / (ns - 1.0) + al * al / (nl - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(WelchTest {
        t,
        df,
        p_value: dist.sf(t),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub same_label: Vec<f64>,
    pub cross_label: Vec<f64>,
    pub test: WelchTest,
    pub consistent: bool,
}

/// Pairwise DTW over the gesture sequences of one user's clips; the user is
/// consistent when same-label distances are significantly smaller than
/// distances between different labels.
pub fn consistency_test(clips: &[HandlingClip]) -> Result<ConsistencyReport> {
    let mut by_label: BTreeMap<&str, usize> = BTreeMap::new();
    for c in clips {
        *by_label.entry(c.motion_label.as_str()).or_default() += 1;
    }
    let repeated = by_label.values().filter(|&&n| n >= 2).count();
    if repeated < 2 {
        return Err(Error::InsufficientData(format!(
            "{repeated} labels have repeated clips; at least 2 are needed"
        )));
    }
    let seqs: Vec<Vec<&[f64]>> = clips
        .iter()
        .map(|c| c.gestures.iter().map(|g| g.keypoints.as_slice()).collect())
        .collect();
    let pairs: Vec<(usize, usize)> = (0..clips.len())
        .flat_map(|i| (i + 1..clips.len()).map(move |j| (i, j)))
        .collect();
    let dists: Vec<(bool, f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let d = dtw_distance(&seqs[i], &seqs[j])?;
            Ok((clips[i].motion_label == clips[j].motion_label, d))
        })
        .collect::<Result<_>>()?;
    let same_label: Vec<f64> = dists.iter().filter(|p| p.0).map(|p| p.1).collect();
    let cross_label: Vec<f64> = dists.iter().filter(|p| !p.0).map(|p| p.1).collect();
    let test = welch_one_sided(&same_label, &cross_label)?;
    Ok(ConsistencyReport {
        consistent: test.p_value < ACCEPT_P_VALUE,
        same_label,
        cross_label,
        test,
    })
}
