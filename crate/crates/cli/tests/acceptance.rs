//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 6 to 9 compare trained models against each other and are
//! reported without failing the run unless `CCHP_ACCEPTANCE_STRICT` is set.
//! Every other criterion is a contract and fails the run. Pass criterion
//! numbers as arguments to run a subset.

use std::collections::HashMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use cchp_autodiff::gradcheck::check_gradients;
use cchp_autodiff::prob::{gaussian_log_prob, kl_diag_gaussians};
use cchp_autodiff::{rng, Array, DiagGaussian, TensorError, Tape, Var};
use cchp_core::baselines::motion_cloning_sequence;
use cchp_core::datagen::skeleton::template;
use cchp_core::datagen::{consistency_test, dtw_distance, generate_corpus, generate_shuffled_user, DatagenConfig};
use cchp_core::domain::{split_corpus, ContextSet, Corpus, GestureFrame, HandlingClip, SplitSpec, TargetSet};
use cchp_core::eval::{run_evaluation, EvalOptions, EvalSetting, Evaluated, MetricsReport};
use cchp_core::model::{infer_stream, CchpConfig, CchpModel, EpisodeNoise, Normalizer, StreamSession};
use cchp_core::models::{AnyModel, ModelKind};
use cchp_core::trainer::{self, TeacherSchedule, TrainConfig};
use rand::seq::SliceRandom;
use rand::Rng;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradient_correctness() -> Outcome {
    let (corpus, _) = generate_corpus(1, 0, 5, &DatagenConfig::default()).unwrap();
    let all = &corpus.users[0].clips;
    let normalizer = Normalizer::fit(all).unwrap();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..100u64 {
        let mut r = rng::stream(seed, &[0x6c]);
        let config = CchpConfig {
            autoregressive: seed % 4 != 3,
            ..CchpConfig::miniature()
        };
        let mut model = CchpModel::new(config, normalizer.clone(), seed).unwrap();
        let biases: Vec<String> = model.params.iter().filter(|p| p.name.ends_with(".b")).map(|p| p.name.clone()).collect();
        for name in biases {
            let n = model.params.require(&name).unwrap().len();
            let b = (0..n).map(|_| r.random_range(-0.3..0.3)).collect();
            model.params.set(&name, Array::new(vec![n], b).unwrap()).unwrap();
        }
        let mut window = |len: usize| {
            let clip = &all[r.random_range(0..all.len())];
            let s = r.random_range(0..clip.len() - len);
            HandlingClip {
                gestures: clip.gestures[s..s + len].to_vec(),
                operations: clip.operations[s..s + len].to_vec(),
                ..clip.clone()
            }
        };
        let ctx: Vec<ContextSet> = (0..2).map(|_| ContextSet::from_clips([&window(4)]).unwrap()).collect();
        let tgt: Vec<TargetSet> = (0..2).map(|_| TargetSet::from_clip(&window(3))).collect();
        let batch = model.prepare(&[(&ctx[0], &tgt[0]), (&ctx[1], &tgt[1])]).unwrap();
        let noise: Vec<EpisodeNoise> = (0..2)
            .map(|_| EpisodeNoise {
                eps: (0..4).map(|_| r.random_range(-1.0..1.0)).collect(),
                teacher: (0..3).map(|_| r.random_bool(0.5)).collect(),
            })
            .collect();
        let names: Vec<String> = model.params.iter().map(|p| p.name.clone()).collect();
        let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let inputs: Vec<Array> = model.params.iter().map(|p| (*p.value).clone()).collect();
        let loss = |tape: &Tape, vars: &[Var]| {
            let mut binder = |name: &str| -> cchp_core::Result<_> { Ok(vars[index[name]]) };
            let mut net = model.bind(tape, &mut binder).map_err(|e| TensorError::Shape(e.to_string()))?;
            let terms = model
                .elbo_on_tape(tape, &mut net, &batch, &noise)
                .map_err(|e| TensorError::Shape(e.to_string()))?;
            Ok(terms.loss)
        };
        let tape = Tape::new();
        let leaves: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let value = tape.value(loss(&tape, &leaves).unwrap()).item();
        // Central differences cannot resolve partials much below |loss| * 1e-6 at h = 1e-5.
        let floor = (1e-6 * value.abs()).max(1e-5);
        let report = check_gradients(&inputs, 1e-5, floor, loss).unwrap();
        worst = worst.max(report.max_relative_error);
        checked += report.checked;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 120.0,
        format!("max relative error {worst:.2e} over {checked} partials, 100 seeds, {secs:.1} s (limits 1e-4, 120 s)"),
    )
}

fn log_density_product(x: &[f64], mean: &[f64], sigma: &[f64]) -> f64 {
    let mut p = 1.0;
    for i in 0..x.len() {
        let z = (x[i] - mean[i]) / sigma[i];
        p *= (-0.5 * z * z).exp() / (sigma[i] * (2.0 * std::f64::consts::PI).sqrt());
    }
    p.ln()
}

fn probability_primitives() -> Outcome {
    let mut r = rng::stream(2, &[]);
    let mut worst_se: f64 = 0.0;
    for pair in 0..50u64 {
        let d = r.random_range(1..=32);
        let mut g = || {
            DiagGaussian::new(
                (0..d).map(|_| r.random_range(-1.0..1.0)).collect(),
                (0..d).map(|_| r.random_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        };
        let (q, p) = (g(), g());
        let mut s = rng::stream(2, &[pair]);
        let n = 200_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let z = q.sample(&mut s);
            let v = q.log_prob(&z).unwrap() - p.log_prob(&z).unwrap();
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sum2 / n as f64 - mean * mean) / (n as f64 - 1.0)).sqrt();
        let kl = kl_diag_gaussians(&q, &p).unwrap();
        worst_se = worst_se.max((kl - mean).abs() / se);
    }
    let mut worst_lp: f64 = 0.0;
    for _ in 0..100 {
        let d = r.random_range(1..=8);
        let x: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let m: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let s: Vec<f64> = (0..d).map(|_| r.random_range(0.2..3.0)).collect();
        let lp = gaussian_log_prob(&x, &m, &s).unwrap();
        worst_lp = worst_lp.max((lp - log_density_product(&x, &m, &s)).abs());
    }
    outcome(
        worst_se < 3.0 && worst_lp < 1e-10,
        format!("worst KL deviation {worst_se:.2} SE over 50 pairs (limit 3); worst log-density error {worst_lp:.1e} (limit 1e-10)"),
    )
}

fn brute_force_dtw(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    fn walk(a: &[Vec<f64>], b: &[Vec<f64>], i: usize, j: usize, acc: f64, best: &mut f64) {
        let c: f64 = a[i].iter().zip(&b[j]).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let acc = acc + c;
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

fn dtw_equivalence() -> Outcome {
    let mut r = rng::stream(3, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let dim = r.random_range(1..=4);
        let (la, lb) = (r.random_range(1..=6), r.random_range(1..=6));
        let mut seq = |len: usize| -> Vec<Vec<f64>> {
            (0..len).map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect()).collect()
        };
        let (a, b) = (seq(la), seq(lb));
        worst = worst.max((dtw_distance(&a, &b).unwrap() - brute_force_dtw(&a, &b)).abs());
    }
    outcome(worst <= 1e-12, format!("worst difference {worst:.1e} over 200 pairs (limit 1e-12)"))
}

fn consistency_gate() -> Outcome {
    let cfg = DatagenConfig::default();
    let (corpus, _) = generate_corpus(20, 0, 4, &cfg).unwrap();
    let accepted = corpus
        .users
        .iter()
        .filter(|u| consistency_test(&u.clips).unwrap().consistent)
        .count();
    let rejected = (0..20u64)
        .filter(|&i| {
            let clips = generate_shuffled_user(&format!("s{i:02}"), 400 + i, &cfg).unwrap();
            !consistency_test(&clips).unwrap().consistent
        })
        .count();
    outcome(
        accepted == 20 && rejected == 20,
        format!(
            "jitter {} mm: {accepted}/20 consistent users accepted, {rejected}/20 shuffled users rejected",
            cfg.style.jitter_m * 1e3
        ),
    )
}

fn rodrigues(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let [x, y, z] = axis;
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

fn moved(pose: &[f64], r: &[[f64; 3]; 3], shift: [f64; 3]) -> Vec<f64> {
    let n = pose.len() / 3;
    let c: Vec<f64> = (0..3).map(|j| (0..n).map(|k| pose[3 * k + j]).sum::<f64>() / n as f64).collect();
    let mut out = Vec::with_capacity(pose.len());
    for k in 0..n {
        let p: Vec<f64> = (0..3).map(|j| pose[3 * k + j] - c[j]).collect();
        for i in 0..3 {
            out.push(c[i] + shift[i] + (0..3).map(|j| r[i][j] * p[j]).sum::<f64>());
        }
    }
    out
}

fn random_axis(r: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.map(|x| x / n);
        }
    }
}

fn motion_cloning_exactness() -> Outcome {
    let mut r = rng::stream(5, &[0x6d]);
    let dt = 0.1;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut pose = moved(&template(), &rodrigues(random_axis(&mut r), r.random_range(0.0..3.0)), [0.0; 3]);
        let mut frames = vec![GestureFrame::new(0.0, pose.clone()).unwrap()];
        let mut truth = Vec::new();
        for t in 1..50 {
            let axis = random_axis(&mut r);
            let omega = r.random_range(0.0..1.5);
            let v: [f64; 3] = std::array::from_fn(|_| r.random_range(-0.2..0.2));
            pose = moved(&pose, &rodrigues(axis, omega * dt), v.map(|x| x * dt));
            frames.push(GestureFrame::new(t as f64 * dt, pose.clone()).unwrap());
            truth.push((v, axis.map(|a| a * omega)));
        }
        let preds = motion_cloning_sequence(&frames, 1.0).unwrap();
        for (p, (v, w)) in preds[1..].iter().zip(&truth) {
            for d in 0..3 {
                worst = worst.max((p.linear[d] - v[d]).abs()).max((p.angular[d] - w[d]).abs());
            }
        }
    }
    outcome(worst <= 1e-6, format!("worst velocity error {worst:.1e} over 100 clips (limit 1e-6)"))
}

/// Models trained once on the desk corpus and shared by criteria 6 to 10.
struct Desk {
    corpus: Corpus,
    split: SplitSpec,
    cchp: CchpModel,
    reports: HashMap<(String, EvalSetting), Option<MetricsReport>>,
}

/// Desk-scale training keeps the teacher-forcing hold at the same fraction
/// of training as the full-scale schedule.
fn desk_config(epochs: usize, per_epoch: usize) -> TrainConfig {
    let full_scale = TrainConfig::default();
    let full_steps = full_scale.epochs * 360usize.div_ceil(full_scale.batch_size);
    TrainConfig {
        epochs,
        seed: 1,
        p_tf_hold: full_scale.p_tf_hold * epochs * per_epoch / full_steps,
        ..full_scale
    }
}

fn fit(kind: ModelKind, train: &[&HandlingClip], cfg: &TrainConfig, label: &str) -> AnyModel {
    let start = Instant::now();
    let mut model = AnyModel::init(kind, train.iter().copied(), cfg.seed).unwrap();
    let steps = trainer::train(&mut model, train, cfg, |_| Ok(())).unwrap().len();
    eprintln!("trained {label}: {steps} steps in {:.0} s", start.elapsed().as_secs_f64());
    model
}

fn desk() -> Desk {
    let (corpus, _) = generate_corpus(6, 2, 7, &DatagenConfig::default()).unwrap();
    let split = split_corpus(&corpus, 7).unwrap();
    let train = split.train_clips(&corpus);
    let cfg = desk_config(100, trainer::steps_per_epoch(train.len(), 32));
    let constant = TrainConfig {
        p_tf_init: 0.9,
        p_tf_schedule: TeacherSchedule::Constant,
        ..cfg.clone()
    };
    let policies = vec![
        Evaluated::motion_cloning(),
        Evaluated::Trained { label: "cchp".into(), model: fit(ModelKind::Cchp, &train, &cfg, "cchp") },
        Evaluated::Trained { label: "lstm".into(), model: fit(ModelKind::Lstm, &train, &cfg, "lstm") },
        Evaluated::Trained { label: "cchp_tf09".into(), model: fit(ModelKind::Cchp, &train, &constant, "cchp_tf09") },
    ];
    let rows = run_evaluation(&policies, &corpus, &split, &EvalSetting::ALL, &EvalOptions::default()).unwrap();
    let reports = rows.into_iter().map(|r| ((r.model, r.setting), r.report)).collect();
    let cchp = match policies.into_iter().nth(1) {
        Some(Evaluated::Trained { model: AnyModel::Cchp(m), .. }) => m,
        _ => unreachable!(),
    };
    Desk { corpus, split, cchp, reports }
}

fn metric(d: &Desk, model: &str, setting: EvalSetting) -> (f64, f64) {
    let m = d.reports[&(model.to_string(), setting)].as_ref().unwrap();
    (m.rmse_translation, m.mean_rotation_error)
}

fn desk_learning(d: &Desk) -> Outcome {
    let c = metric(d, "cchp", EvalSetting::NewUser);
    let l = metric(d, "lstm", EvalSetting::NewUser);
    outcome(
        c.0 < l.0 && c.1 < l.1,
        format!("new user: cchp {:.3} cm/s {:.3} deg/s vs lstm {:.3} cm/s {:.3} deg/s", c.0, c.1, l.0, l.1),
    )
}

fn setting_ordering(d: &Desk) -> Outcome {
    let m = metric(d, "cchp", EvalSetting::MatchingContext);
    let x = metric(d, "cchp", EvalSetting::MismatchingMotion);
    let n = metric(d, "cchp", EvalSetting::NewUser);
    let ok = |a: f64, b: f64| a <= 1.05 * b;
    outcome(
        ok(m.0, x.0) && ok(x.0, n.0) && ok(m.1, x.1) && ok(x.1, n.1),
        format!(
            "matching {:.3}/{:.3}, mismatching {:.3}/{:.3}, new user {:.3}/{:.3} (cm/s / deg/s, 5% slack)",
            m.0, m.1, x.0, x.1, n.0, n.1
        ),
    )
}

fn noise_robustness(d: &Desk) -> Outcome {
    let rel = |model: &str| {
        let clean = metric(d, model, EvalSetting::MatchingContext).0;
        metric(d, model, EvalSetting::NoisyInput).0 / clean - 1.0
    };
    let (c, m) = (rel("cchp"), rel("mc"));
    outcome(c < m, format!("noisy vs matching translation: cchp {:+.1}%, motion cloning {:+.1}%", 100.0 * c, 100.0 * m))
}

fn teacher_forcing_ablation(d: &Desk) -> Outcome {
    let s = metric(d, "cchp", EvalSetting::MatchingContext).0;
    let c = metric(d, "cchp_tf09", EvalSetting::MatchingContext).0;
    outcome(
        c >= 1.5 * s,
        format!("matching translation: constant 0.9 {c:.3} cm/s vs scheduled {s:.3} cm/s, ratio {:.2} (limit 1.5)", c / s),
    )
}

fn streaming_contract(d: &Desk) -> Outcome {
    let model = &d.cchp;
    let clips = d.split.test_in_clips(&d.corpus);
    let mut r = rng::stream(10, &[]);
    let mut equal = 0;
    for case in 0..50u64 {
        let mut picks: Vec<&HandlingClip> = clips.clone();
        picks.shuffle(&mut r);
        let target = picks[0];
        let same_user: Vec<&HandlingClip> = clips
            .iter()
            .copied()
            .filter(|c| c.user_id == target.user_id && c.clip_id != target.clip_id)
            .take(r.random_range(1..=4))
            .collect();
        let ctx = ContextSet::from_clips(same_user).unwrap();
        let deterministic = case % 2 == 0;
        let batch = model.infer_sequence(&ctx, &target.gestures, &mut rng::stream(case, &[]), deterministic).unwrap();
        let mut s = StreamSession::new(model);
        s.start(&[&ctx], &mut rng::stream(case, &[]), deterministic).unwrap();
        let streamed: Vec<_> = target.gestures.iter().map(|g| infer_stream(&mut s, g).unwrap()).collect();
        equal += usize::from(batch == streamed);
    }

    let ctx = ContextSet::from_clips(clips.iter().copied().filter(|c| c.user_id == clips[0].user_id).take(4)).unwrap();
    let frames: Vec<&GestureFrame> = d.corpus.users.iter().flat_map(|u| &u.clips).flat_map(|c| &c.gestures).take(1020).collect();
    let mut s = StreamSession::new(model);
    s.start(&[&ctx], &mut rng::stream(0, &[]), true).unwrap();
    let mut times: Vec<f64> = frames
        .iter()
        .map(|g| {
            let t = Instant::now();
            s.step(&[g]).unwrap();
            t.elapsed().as_secs_f64()
        })
        .collect();
    times.drain(..20);
    let trimmed_variance = |w: &[f64]| {
        let mut w = w.to_vec();
        w.sort_by(f64::total_cmp);
        w.truncate(w.len() * 99 / 100);
        let m = w.iter().sum::<f64>() / w.len() as f64;
        w.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (w.len() - 1) as f64
    };
    let (early, late) = times.split_at(times.len() / 2);
    let (ve, vl) = (trimmed_variance(early), trimmed_variance(late));
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let p99 = sorted[sorted.len() * 99 / 100];
    let median = sorted[sorted.len() / 2];
    outcome(
        equal == 50 && p99 < 0.05 && vl <= 2.0 * ve + 1e-10,
        format!(
            "{equal}/50 cases bitwise equal; step latency median {:.2} ms, p99 {:.2} ms (limit 50 ms); \
             step-time variance {:.2e} then {:.2e} s^2 over 1000 steps",
            median * 1e3,
            p99 * 1e3,
            ve,
            vl
        ),
    )
}

fn run_twice(dir: &Path, args: impl Fn(&Path) -> Vec<String>, outputs: &[&str]) -> Result<(), String> {
    let mut captured = Vec::new();
    for run in ["a", "b"] {
        let root = dir.join(run);
        let out = Command::new(env!("CARGO_BIN_EXE_cchp"))
            .args(args(&root))
            .env_remove("CCHP_SEED")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(String::from_utf8_lossy(&out.stderr).into_owned());
        }
        let files: Vec<Vec<u8>> = outputs.iter().map(|f| fs::read(root.join(f)).unwrap_or_default()).collect();
        let stdout = String::from_utf8_lossy(&out.stdout).replace(&*root.to_string_lossy(), "ROOT");
        captured.push((stdout, files));
    }
    if captured[0] != captured[1] {
        return Err("outputs differ between runs".into());
    }
    Ok(())
}

fn determinism() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let dir = tmp.path();
    let p = |root: &Path, f: &str| root.join(f).to_string_lossy().into_owned();
    let mut notes = Vec::new();
    let mut pass = true;
    let mut check = |stage: &str, r: Result<(), String>| {
        match r {
            Ok(()) => notes.push(format!("{stage} identical")),
            Err(e) => {
                pass = false;
                notes.push(format!("{stage} failed: {}", e.trim()));
            }
        }
    };
    let gen = |root: &Path| -> Vec<String> {
        ["gen-data", "--out", &p(root, "data"), "--in-sample", "2", "--out-sample", "1", "--seed", "11"].map(String::from).to_vec()
    };
    check(
        "gen-data",
        run_twice(dir, gen, &["data/manifest.json", "data/styles.json", "data/split.json", "data/clips/u00.jsonl", "data/clips/u02.jsonl"]),
    );
    let train = |root: &Path| -> Vec<String> {
        [
            "train", "--corpus", &p(&dir.join("a"), "data"), "--model", "cchp", "--out", &p(root, "m.ckpt"), "--epochs", "10",
            "--seed", "11",
        ]
        .map(String::from)
        .to_vec()
    };
    check("train", run_twice(dir, train, &["m.ckpt", "m.loss.csv"]));
    let eval = |root: &Path| -> Vec<String> {
        [
            "eval", "--corpus", &p(&dir.join("a"), "data"), "--checkpoints", &format!("mc,{}", p(&dir.join("a"), "m.ckpt")),
            "--out", &p(root, "report.csv"), "--seed", "11",
        ]
        .map(String::from)
        .to_vec()
    };
    check("eval", run_twice(dir, eval, &["report.csv", "report_cumulative.csv"]));
    outcome(pass, notes.join("; "))
}

const EMPIRICAL: [usize; 4] = [6, 7, 8, 9];

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |i: usize| selected.is_empty() || selected.contains(&i);
    let strict = std::env::var_os("CCHP_ACCEPTANCE_STRICT").is_some();

    let names = [
        "gradient correctness",
        "probability primitives",
        "DTW oracle equivalence",
        "consistency gate",
        "motion-cloning exactness",
        "desk-scale learning",
        "setting ordering",
        "noise robustness",
        "teacher-forcing ablation",
        "streaming contract",
        "determinism",
    ];
    let desk = if (6..=10).any(wanted) {
        Some(desk())
    } else {
        None
    };
    let mut fatal = false;
    for (i, name) in names.iter().enumerate() {
        let id = i + 1;
        if !wanted(id) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(|| match id {
            1 => gradient_correctness(),
            2 => probability_primitives(),
            3 => dtw_equivalence(),
            4 => consistency_gate(),
            5 => motion_cloning_exactness(),
            6 => desk_learning(desk.as_ref().unwrap()),
            7 => setting_ordering(desk.as_ref().unwrap()),
            8 => noise_robustness(desk.as_ref().unwrap()),
            9 => teacher_forcing_ablation(desk.as_ref().unwrap()),
            10 => streaming_contract(desk.as_ref().unwrap()),
            _ => determinism(),
        }));
        let o = result.unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        println!(
            "criterion {id:>2} {} {name}: {} [{:.0} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass && (strict || !EMPIRICAL.contains(&id)) {
            fatal = true;
        }
    }
    if fatal {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
