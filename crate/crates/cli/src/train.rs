use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cchp_core::domain::{Corpus, HandlingClip, SplitSpec};
use cchp_core::eval::{run_evaluation, Evaluated, MetricsReport};
use cchp_core::models::{AnyModel, ModelKind};
use cchp_core::trainer::{self, steps_per_epoch, write_history, LossRecord, TeacherSchedule, TrainConfig, TrainEvent};
use cchp_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::data::read_corpus_with_split;
use crate::evaluate::{eval_options, parse_settings};
use crate::{AblateArgs, TrainArgs, TrainOverrides};

/// Metadata stored alongside the parameters of CLI checkpoints.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub config: TrainConfig,
    pub steps: usize,
}

fn resolve_config(o: &TrainOverrides, seed: Option<u64>) -> Result<TrainConfig> {
    let mut c = match &o.config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => {$(if let Some(v) = o.$f { c.$f = v; })*};
    }
    set!(epochs, lr, batch_size, micro_batch, p_m, p_tf_init, p_tf_hold, p_tf_schedule, noise_variance, context_clips, checkpoint_every);
    if let Some(s) = seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn history_path(out: &Path) -> PathBuf {
    out.with_extension("loss.csv")
}

/// Trains one model and writes its checkpoint and loss history.
fn fit(kind: ModelKind, train: &[&HandlingClip], cfg: &TrainConfig, out: &Path, history: &Path) -> Result<AnyModel> {
    let mut model = AnyModel::init(kind, train.iter().copied(), cfg.seed)?;
    let per_epoch = steps_per_epoch(train.len(), cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut records: Vec<LossRecord> = Vec::new();
    let mut window = (0.0, 0.0, 0usize);
    let result = trainer::train(&mut model, train, cfg, |e| match e {
        TrainEvent::Step(r) => {
            records.push(*r);
            window = (window.0 + r.nll, window.1 + r.kl, window.2 + 1);
            if (r.step + 1) % per_epoch == 0 {
                let n = window.2 as f64;
                eprintln!(
                    "epoch {:>4}  step {:>6}/{total}  nll {:>12.4}  kl {:>9.4}  p_tf {:.3}",
                    (r.step + 1) / per_epoch,
                    r.step + 1,
                    window.0 / n,
                    window.1 / n,
                    r.p_tf
                );
                window = (0.0, 0.0, 0);
            }
            Ok(())
        }
        TrainEvent::Checkpoint { model, step } => model.save(out, &CheckpointInfo { config: cfg.clone(), steps: step }),
        TrainEvent::Diverged { model, step } => {
            let path = out.with_extension("diverged.ckpt");
            eprintln!("writing the last finite parameters to {}", path.display());
            model.save(&path, &CheckpointInfo { config: cfg.clone(), steps: step })
        }
    });
    write_history(BufWriter::new(File::create(history)?), &records)?;
    let records = result?;
    model.save(out, &CheckpointInfo { config: cfg.clone(), steps: records.len() })?;
    Ok(model)
}

fn training_clips<'a>(corpus: &'a Corpus, split: &SplitSpec) -> Result<Vec<&'a HandlingClip>> {
    let train = split.train_clips(corpus);
    if train.len() != split.train.len() {
        return Err(Error::Parse("split manifest lists clips missing from the corpus".into()));
    }
    if train.is_empty() {
        return Err(Error::InsufficientData("the training split is empty".into()));
    }
    Ok(train)
}

pub fn train(a: &TrainArgs, seed: Option<u64>) -> Result<ExitCode> {
    let cfg = resolve_config(&a.train, seed)?;
    let ignored: Vec<&str> = match a.model {
        ModelKind::Lstm => [("--p-m", a.train.p_m.is_some()), ("--p-tf-init", a.train.p_tf_init.is_some())]
            .into_iter()
            .filter_map(|(f, set)| set.then_some(f))
            .collect(),
        ModelKind::Ranp if a.train.p_tf_init.is_some() => vec!["--p-tf-init"],
        _ => Vec::new(),
    };
    if !ignored.is_empty() {
        eprintln!("warning: the {} model ignores {}", a.model, ignored.join(" and "));
    }
    let (corpus, split) = read_corpus_with_split(&a.corpus)?;
    let train = training_clips(&corpus, &split)?;
    let history = a.history.clone().unwrap_or_else(|| history_path(&a.out));
    fit(a.model, &train, &cfg, &a.out, &history)?;
    println!("wrote {} and {}", a.out.display(), history.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Sweep {
    PM,
    PTf,
}

fn parse_sweep(s: &str) -> Result<(Sweep, Vec<f64>)> {
    let (name, values) = match s.split_once(':') {
        Some((n, v)) => (n, Some(v)),
        None => (s, None),
    };
    let sweep = match name {
        "p_m" => Sweep::PM,
        "p_tf" => Sweep::PTf,
        _ => return Err(Error::InvalidArgument(format!("unknown sweep `{name}`; expected p_m or p_tf"))),
    };
    let values = match values {
        Some(v) => v
            .split(',')
            .map(|x| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad sweep value `{x}`")))
            })
            .collect::<Result<Vec<_>>>()?,
        None => match sweep {
            Sweep::PM => vec![0.1, 0.5, 1.0],
            Sweep::PTf => vec![0.1, 0.5, 0.9],
        },
    };
    if values.is_empty() || values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("sweep values must lie in [0, 1]".into()));
    }
    Ok((sweep, values))
}

#[derive(Serialize)]
struct AblationLine<'a> {
    sweep: &'a str,
    value: f64,
    setting: &'a str,
    rmse_cm_s: String,
    rot_deg_s: String,
}

/// Trains one CCHP model per sweep value and tabulates all settings.
pub fn ablate(a: &AblateArgs, seed: Option<u64>) -> Result<ExitCode> {
    let (sweep, values) = parse_sweep(&a.sweep)?;
    let base = resolve_config(&a.train, seed)?;
    let (corpus, split) = read_corpus_with_split(&a.corpus)?;
    let train = training_clips(&corpus, &split)?;
    let settings = parse_settings(&a.eval.settings)?;
    let opts = eval_options(&a.eval, base.seed);
    fs::create_dir_all(&a.out)?;
    let name = match sweep {
        Sweep::PM => "p_m",
        Sweep::PTf => "p_tf",
    };
    let mut rows = Vec::new();
    for &v in &values {
        let mut cfg = base.clone();
        match sweep {
            Sweep::PM => cfg.p_m = v,
            Sweep::PTf => {
                cfg.p_tf_init = v;
                cfg.p_tf_schedule = TeacherSchedule::Constant;
            }
        }
        let stem = format!("cchp_{name}_{v}");
        eprintln!("training {stem}");
        let model = fit(
            ModelKind::Cchp,
            &train,
            &cfg,
            &a.out.join(format!("{stem}.ckpt")),
            &a.out.join(format!("{stem}.loss.csv")),
        )?;
        let evaluated = [Evaluated::Trained { label: stem, model }];
        for row in run_evaluation(&evaluated, &corpus, &split, &settings, &opts)? {
            rows.push((v, row));
        }
    }
    let mut out = csv::Writer::from_writer(BufWriter::new(File::create(a.out.join("ablation.csv"))?));
    for (v, row) in &rows {
        let (t, r) = match &row.report {
            Some(m) => (m.rmse_translation.to_string(), m.mean_rotation_error.to_string()),
            None => ("NA".into(), "NA".into()),
        };
        out.serialize(AblationLine {
            sweep: name,
            value: *v,
            setting: row.setting.as_str(),
            rmse_cm_s: t,
            rot_deg_s: r,
        })?;
        println!("{name}={v:<4} {:<12} {:>10} {:>10}", row.setting.as_str(), short(&row.report, true), short(&row.report, false));
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn short(m: &Option<MetricsReport>, translation: bool) -> String {
    match m {
        Some(m) if translation => format!("{:.3}", m.rmse_translation),
        Some(m) => format!("{:.3}", m.mean_rotation_error),
        None => "NA".into(),
    }
}
