use std::collections::HashSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cchp_core::eval::{run_evaluation, write_histograms, write_report, EvalOptions, EvalSetting, Evaluated};
use cchp_core::models::AnyModel;
use cchp_core::{Error, Result};
use serde::de::IgnoredAny;

use crate::data::{read_corpus_with_split, read_styles};
use crate::{EvalArgs, EvalFlags};

pub fn parse_settings(list: &[String]) -> Result<Vec<EvalSetting>> {
    if list.iter().any(|s| s == "all") {
        return Ok(EvalSetting::ALL.to_vec());
    }
    let mut out: Vec<EvalSetting> = Vec::new();
    for s in list {
        let s: EvalSetting = s.parse()?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("no evaluation settings given".into()));
    }
    Ok(out)
}

pub fn eval_options(f: &EvalFlags, seed: u64) -> EvalOptions {
    EvalOptions {
        seed,
        context_clips: f.eval_context_clips,
        deterministic: !f.sample_latent,
        sigma_t: f.sigma_t,
        sigma_r: f.sigma_r,
        window_s: f.window,
    }
}

fn load_policy(entry: &str, corpus_dir: &Path, rate_hz: f64) -> Result<Evaluated> {
    match entry {
        "mc" => return Ok(Evaluated::motion_cloning()),
        "oracle" => {
            return Ok(Evaluated::Oracle {
                styles: read_styles(corpus_dir)?,
                rate_hz,
            })
        }
        _ => {}
    }
    let (label, path) = match entry.split_once('=') {
        Some((l, p)) => (l.to_string(), PathBuf::from(p)),
        None => {
            let p = PathBuf::from(entry);
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| entry.to_string());
            (stem, p)
        }
    };
    let (model, _): (AnyModel, IgnoredAny) = AnyModel::load(&path)?;
    Ok(Evaluated::Trained { label, model })
}

fn histogram_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_cumulative.csv"))
}

pub fn eval(a: &EvalArgs, seed: u64) -> Result<ExitCode> {
    let (corpus, split) = read_corpus_with_split(&a.corpus)?;
    let settings = parse_settings(&a.eval.settings)?;
    let policies = a
        .checkpoints
        .iter()
        .map(|c| load_policy(c, &a.corpus, corpus.rate_hz))
        .collect::<Result<Vec<_>>>()?;
    let mut labels = HashSet::new();
    if let Some(p) = policies.iter().find(|p| !labels.insert(p.label().to_string())) {
        return Err(Error::InvalidArgument(format!("duplicate model label `{}`", p.label())));
    }
    let rows = run_evaluation(&policies, &corpus, &split, &settings, &eval_options(&a.eval, seed))?;
    write_report(BufWriter::new(File::create(&a.out)?), &rows)?;
    let hist = a.histogram.clone().unwrap_or_else(|| histogram_path(&a.out));
    write_histograms(BufWriter::new(File::create(&hist)?), &rows, a.bin_deg)?;
    println!("{:<16} {:<12} {:>10} {:>10} {:>10}", "model", "setting", "cm/s", "deg/s", "p90 deg");
    for r in &rows {
        match &r.report {
            Some(m) => println!(
                "{:<16} {:<12} {:>10.3} {:>10.3} {:>10.3}",
                r.model,
                r.setting.as_str(),
                m.rmse_translation,
                m.mean_rotation_error,
                m.cumulative.p90
            ),
            None => println!("{:<16} {:<12} {:>10} {:>10} {:>10}", r.model, r.setting.as_str(), "NA", "NA", "NA"),
        }
    }
    Ok(ExitCode::SUCCESS)
}
