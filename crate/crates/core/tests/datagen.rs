use cchp_autodiff::rng;
use cchp_core::datagen::*;
use cchp_core::domain::{split_corpus, validate_clip, UserGroup};
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

fn brute_force_dtw(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    fn cost(x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
    }
    fn walk(a: &[Vec<f64>], b: &[Vec<f64>], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + cost(&a[i], &b[j]);
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

fn random_seq(r: &mut impl Rng, len: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..len)
        .map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect()
}

#[test]
fn dtw_matches_exhaustive_paths() {
    let mut r = rng::stream(17, &[]);
    for _ in 0..200 {
        let dim = r.random_range(1..4);
        let (la, lb) = (r.random_range(1..=6), r.random_range(1..=6));
        let a = random_seq(&mut r, la, dim);
        let b = random_seq(&mut r, lb, dim);
        let fast = dtw_distance(&a, &b).unwrap();
        let slow = brute_force_dtw(&a, &b);
        assert!((fast - slow).abs() <= 1e-12, "{fast} vs {slow}");
    }
}

proptest! {
    #[test]
    fn dtw_symmetric_and_nonnegative(
        a in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 1..8),
        b in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 1..8),
    ) {
        let ab = dtw_distance(&a, &b).unwrap();
        let ba = dtw_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
    }
}

/// ln Gamma by upward recurrence and the Stirling series.
fn ln_gamma(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 10.0 {
        shift -= x.ln();
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    shift + (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}

/// Upper tail of Student's t by Simpson integration of the density after
/// mapping [t, inf) onto [0, 1).
fn t_upper_tail(t: f64, df: f64) -> f64 {
    let ln_norm = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let density = |x: f64| (ln_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    let f = |s: f64| {
        if s >= 1.0 {
            return 0.0;
        }
        let x = t + s / (1.0 - s);
        density(x) / ((1.0 - s) * (1.0 - s))
    };
    let n = 200_000;
    let h = 1.0 / n as f64;
    let mut acc = f(0.0) + f(1.0);
    for i in 1..n {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

#[test]
fn t_tail_oracle_agrees_with_library() {
    for &(t, df) in &[(0.0, 5.0), (1.3, 3.5), (2.5, 40.0), (-1.0, 12.0), (8.0, 200.0), (20.0, 3000.0)] {
        let want = t_upper_tail(t, df);
        let got = StudentsT::new(0.0, 1.0, df).unwrap().sf(t);
        assert!(((got - want) / want).abs() < 1e-6, "t={t} df={df}: {got} vs {want}");
    }
}

#[test]
fn consistency_gate_separates_fixtures() {
    let cfg = DatagenConfig {
        style: StyleConfig {
            jitter_m: 0.001,
            ..Default::default()
        },
        ..Default::default()
    };
    let (corpus, _) = generate_corpus(1, 0, 21, &cfg).unwrap();
    let good = consistency_test(&corpus.users[0].clips).unwrap();
    assert!(good.consistent, "p = {}", good.test.p_value);
    let want = t_upper_tail(good.test.t, good.test.df);
    if want > 1e-280 {
        assert!(((good.test.p_value - want) / want).abs() < 1e-6);
    } else {
        assert!(good.test.p_value < 1e-250);
    }
    let shuffled = generate_shuffled_user("s", 21, &cfg).unwrap();
    let bad = consistency_test(&shuffled).unwrap();
    assert!(!bad.consistent, "p = {}", bad.test.p_value);
    assert_eq!(good.same_label.len(), 36);
    assert_eq!(good.same_label.len() + good.cross_label.len(), 72 * 71 / 2);
}

#[test]
fn generated_corpus_splits_exactly() {
    let (corpus, styles) = generate_corpus(3, 1, 5, &DatagenConfig::default()).unwrap();
    assert_eq!(corpus.num_clips(), 4 * 72);
    assert_eq!(corpus.users_in(UserGroup::OutSample).count(), 1);
    for s in &styles {
        s.check().unwrap();
    }
    for u in &corpus.users {
        assert!(u.clips.iter().all(|c| validate_clip(c).is_valid()));
    }
    let split = split_corpus(&corpus, 5).unwrap();
    assert_eq!(split.train.len(), 108);
    assert_eq!(split.test_in_sample.len(), 108);
    assert_eq!(split.test_out_sample.len(), 72);
}

#[test]
fn oracle_inverse_on_jitter_free_corpus() {
    let mut cfg = DatagenConfig::default();
    cfg.style.jitter_m = 0.0;
    let (corpus, styles) = generate_corpus(2, 0, 8, &cfg).unwrap();
    for (u, s) in corpus.users.iter().zip(&styles) {
        let inv = StyleInverse::new(s).unwrap();
        for c in &u.clips {
            for (v, o) in inv.velocities(&c.gestures, c.rate_hz).iter().zip(&c.operations) {
                for (a, b) in v.iter().zip(o.to_array()) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }
}
