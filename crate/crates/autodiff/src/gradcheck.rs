//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used for the numerical side, so the check
//! is independent of the backward rules it validates.

use crate::array::Array;
use crate::error::Result;
use crate::tape::{Tape, Var};

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(input index, element index, analytic, numeric)` of the worst entry.
    pub worst: (usize, usize, f64, f64),
    pub checked: usize,
}

/// Compares tape gradients of `f` against central differences with step
/// `h` for every element of every input. `f` builds a scalar on a fresh
/// tape from leaves holding `inputs`.
pub fn check_gradients<F>(inputs: &[Array], h: f64, floor: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Array]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.variable(x.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0, 0.0, 0.0),
        checked: 0,
    };
    let mut work: Vec<Array> = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(v);
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = x0 - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[j];
            let err = relative_error(a, numeric, floor);
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = (i, j, a, numeric);
            }
        }
    }
    Ok(report)
}
