//! Diagonal-Gaussian helpers used by the variational objective.
//!
//! Each quantity has a plain `f64` form and a tape form built from
//! primitives, so the tape form is differentiated automatically.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::array::Array;
use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};

pub const LOG_VARIANCE_MIN: f64 = -10.0;
pub const LOG_VARIANCE_MAX: f64 = 10.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian stored as mean and log-variance. Log-variances are
/// clamped into `[LOG_VARIANCE_MIN, LOG_VARIANCE_MAX]` on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    log_variance: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_variance: Vec<f64>) -> Result<Self> {
        if mean.len() != log_variance.len() || mean.is_empty() {
            return shape_err(format!(
                "DiagGaussian: mean {} vs log-variance {}",
                mean.len(),
                log_variance.len()
            ));
        }
        let log_variance = log_variance
            .into_iter()
            .map(|v| v.clamp(LOG_VARIANCE_MIN, LOG_VARIANCE_MAX))
            .collect();
        Ok(Self { mean, log_variance })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_variance: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_variance(&self) -> &[f64] {
        &self.log_variance
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.log_variance.iter().map(|l| (0.5 * l).exp()).collect()
    }

    /// `mean + std * eps` with `eps ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(self.std_dev())
            .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return shape_err(format!("log_prob: x has {} dims, expected {}", x.len(), self.dim()));
        }
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.log_variance)
            .map(|((x, m), lv)| -HALF_LN_2PI - 0.5 * lv - (x - m).powi(2) / (2.0 * lv.exp()))
            .sum())
    }
}

/// `log N(x; mean, diag(sigma^2))` for standard deviations `sigma`.
pub fn gaussian_log_prob(x: &[f64], mean: &[f64], sigma: &[f64]) -> Result<f64> {
    if x.len() != mean.len() || x.len() != sigma.len() {
        return shape_err("gaussian_log_prob: dimension mismatch");
    }
    Ok(x.iter()
        .zip(mean)
        .zip(sigma)
        .map(|((x, m), s)| -HALF_LN_2PI - s.ln() - (x - m).powi(2) / (2.0 * s * s))
        .sum())
}

/// Closed-form `KL(q || p)` between diagonal Gaussians.
pub fn kl_diag_gaussians(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return shape_err(format!("kl_diag_gaussians: {} vs {} dims", q.dim(), p.dim()));
    }
    let kl: f64 = (0..q.dim())
        .map(|i| {
            let (lq, lp) = (q.log_variance[i], p.log_variance[i]);
            let dm = q.mean[i] - p.mean[i];
            0.5 * ((lp - lq) + (lq.exp() + dm * dm) / lp.exp() - 1.0)
        })
        .sum();
    // Rounding can leave a tiny negative residue when q == p.
    Ok(kl.max(0.0))
}

/// Tape form of [`gaussian_log_prob`], summed over every element.
pub fn log_prob_on_tape(tape: &Tape, x: Var, mean: Var, sigma: Var) -> Result<Var> {
    let n = tape.value(x).len() as f64;
    let resid = tape.sub(x, mean)?;
    let z = tape.div(resid, sigma)?;
    let quad = tape.sum(tape.square(z)?)?;
    let log_det = tape.sum(tape.ln(sigma)?)?;
    let both = tape.add(tape.scale(quad, 0.5)?, log_det)?;
    tape.add_scalar(tape.scale(both, -1.0)?, -HALF_LN_2PI * n)
}

/// Tape form of [`kl_diag_gaussians`] for log-variance parameterized
/// Gaussians, summed over every element (and therefore over batch rows).
pub fn kl_on_tape(tape: &Tape, mean_q: Var, logvar_q: Var, mean_p: Var, logvar_p: Var) -> Result<Var> {
    let n = tape.value(mean_q).len() as f64;
    let log_ratio = tape.sub(logvar_p, logvar_q)?;
    let var_q = tape.exp(logvar_q)?;
    let var_p = tape.exp(logvar_p)?;
    let dm2 = tape.square(tape.sub(mean_q, mean_p)?)?;
    let frac = tape.div(tape.add(var_q, dm2)?, var_p)?;
    let total = tape.sum(tape.add(log_ratio, frac)?)?;
    tape.scale(tape.add_scalar(total, -n)?, 0.5)
}

/// Reparameterized draw `mean + exp(logvar / 2) * eps`, differentiable in
/// both `mean` and `logvar`. `eps` must match the shape of `mean`.
pub fn reparam_on_tape(tape: &Tape, mean: Var, logvar: Var, eps: Array) -> Result<Var> {
    if tape.value(mean).shape() != eps.shape() {
        return shape_err("reparam: noise shape differs from mean");
    }
    let std = tape.exp(tape.scale(logvar, 0.5)?)?;
    let noise = tape.constant(eps);
    tape.add(mean, tape.mul(std, noise)?)
}

/// Draws standard-normal noise of the given shape.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Array {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Array::new(shape.to_vec(), data).expect("shape product matches")
}
