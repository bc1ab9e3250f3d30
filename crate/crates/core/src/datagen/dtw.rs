use crate::error::{Error, Result};

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Unconstrained dynamic time warping with Euclidean frame cost and the
/// symmetric step pattern {(1,0), (0,1), (1,1)}.
pub fn dtw_distance<A: AsRef<[f64]>, B: AsRef<[f64]>>(a: &[A], b: &[B]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySequence);
    }
    let k = a[0].as_ref().len();
    if let Some(f) = a.iter().map(AsRef::as_ref).chain(b.iter().map(AsRef::as_ref)).find(|f| f.len() != k) {
        return Err(Error::Shape(format!(
            "frame dimension {} differs from {k}",
            f.len()
        )));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![0.0; m];
    for (i, ai) in a.iter().enumerate() {
        for j in 0..m {
            let d = euclidean(ai.as_ref(), b[j].as_ref());
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j].min(cur[j - 1]).min(prev[j - 1]),
            };
            cur[j] = d + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}
