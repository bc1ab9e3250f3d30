use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use cchp_autodiff::rng;
use cchp_core::domain::{read_clips, ContextSet, GestureFrame};
use cchp_core::model::{OperationGaussian, StreamSession};
use cchp_core::models::AnyModel;
use cchp_core::{Error, Result};
use serde::de::IgnoredAny;
use serde::Serialize;

use crate::InferArgs;

#[derive(Serialize)]
struct OutputLine {
    timestamp: f64,
    vx: f64,
    vy: f64,
    vz: f64,
    wx: f64,
    wy: f64,
    wz: f64,
    sigma_vx: Option<f64>,
    sigma_vy: Option<f64>,
    sigma_vz: Option<f64>,
    sigma_wx: Option<f64>,
    sigma_wy: Option<f64>,
    sigma_wz: Option<f64>,
}

impl OutputLine {
    fn new(timestamp: f64, mean: [f64; 6], sigma: Option<[f64; 6]>) -> Self {
        let s = |d: usize| sigma.map(|s| s[d]);
        Self {
            timestamp,
            vx: mean[0],
            vy: mean[1],
            vz: mean[2],
            wx: mean[3],
            wy: mean[4],
            wz: mean[5],
            sigma_vx: s(0),
            sigma_vy: s(1),
            sigma_vz: s(2),
            sigma_wx: s(3),
            sigma_wy: s(4),
            sigma_wz: s(5),
        }
    }

    fn of(timestamp: f64, p: &OperationGaussian) -> Self {
        Self::new(timestamp, p.mean, Some(p.sigma))
    }
}

/// Lazily parsed gesture frames, one JSON object per line.
struct Frames<R> {
    lines: io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Iterator for Frames<R> {
    type Item = Result<GestureFrame>;

    fn next(&mut self) -> Option<Result<GestureFrame>> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<GestureFrame>(&line)
                .map_err(|e| e.to_string())
                .and_then(|g| {
                    if !g.timestamp.is_finite() || g.keypoints.iter().any(|v| !v.is_finite()) {
                        return Err("non-finite value".to_string());
                    }
                    GestureFrame::new(g.timestamp, g.keypoints).map_err(|e| e.to_string())
                })
                .map_err(|e| Error::Parse(format!("gesture line {}: {e}", self.line)));
            return Some(parsed);
        }
    }
}

fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    Ok(if path == Path::new("-") {
        Box::new(io::stdin().lock())
    } else {
        Box::new(BufReader::new(File::open(path)?))
    })
}

fn open_output(path: &Path) -> Result<Box<dyn Write>> {
    Ok(if path == Path::new("-") {
        Box::new(io::stdout().lock())
    } else {
        Box::new(BufWriter::new(File::create(path)?))
    })
}

fn read_context(path: &Path) -> Result<ContextSet> {
    let file = File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => Error::EmptyContext,
        _ => e.into(),
    })?;
    let clips = read_clips(BufReader::new(file))?;
    if clips.is_empty() {
        return Err(Error::EmptyContext);
    }
    ContextSet::from_clips(&clips)
}

fn write_attention(path: &Path, weights: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(File::create(path)?));
    for row in weights {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn infer(a: &InferArgs, seed: u64) -> Result<ExitCode> {
    let (model, _): (AnyModel, IgnoredAny) = AnyModel::load(&a.checkpoint)?;
    let context = read_context(&a.context)?;
    let frames = Frames {
        lines: open_input(&a.gestures)?.lines(),
        line: 0,
    };
    let mut out = csv::Writer::from_writer(open_output(&a.out)?);
    match &model {
        AnyModel::Lstm(m) => {
            if a.stream || a.dump_attention.is_some() {
                return Err(Error::InvalidArgument(
                    "--stream and --dump-attention need a context-conditioned checkpoint".into(),
                ));
            }
            let gestures = frames.collect::<Result<Vec<_>>>()?;
            let preds = m.predict(&[&gestures])?.remove(0);
            for (g, p) in gestures.iter().zip(preds) {
                out.serialize(OutputLine::new(g.timestamp, p.to_array(), None))?;
            }
        }
        AnyModel::Cchp(m) => {
            let mut session = StreamSession::new(m);
            if a.dump_attention.is_some() {
                session.record_attention();
            }
            session.start(&[&context], &mut rng::stream(seed, &[0x1f]), !a.sample_latent)?;
            if a.stream {
                for g in frames {
                    let g = g?;
                    let p = session.step(&[&g])?.remove(0);
                    out.serialize(OutputLine::of(g.timestamp, &p))?;
                    out.flush()?;
                }
            } else {
                let gestures = frames.collect::<Result<Vec<_>>>()?;
                for g in &gestures {
                    let p = session.step(&[g])?.remove(0);
                    out.serialize(OutputLine::of(g.timestamp, &p))?;
                }
            }
            if let Some(path) = &a.dump_attention {
                let weights = session.attention().map(|a| a[0].as_slice()).unwrap_or(&[]);
                write_attention(path, weights)?;
            }
        }
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}
