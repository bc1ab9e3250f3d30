use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use cchp_autodiff::rng;
use cchp_core::datagen::{
    consistency_test, frame_count, generate_corpus_from, generate_shuffled_user_from, motion_library, user_id,
    DatagenConfig, SyntheticUserStyle,
};
use cchp_core::domain::{split_corpus, write_corpus, write_json, Corpus, SplitSpec, UserGroup, UserRecord};
use cchp_core::{Error, Result};
use serde::Serialize;

use crate::{CheckArgs, GenDataArgs};

pub const STYLES_FILE: &str = "styles.json";
pub const SPLIT_FILE: &str = "split.json";
pub const DATAGEN_FILE: &str = "datagen.json";

#[derive(Serialize)]
struct DatagenRecord<'a> {
    seed: u64,
    in_sample: usize,
    out_sample: usize,
    shuffled_users: usize,
    clip_frames: usize,
    config: &'a DatagenConfig,
}

pub fn gen_data(a: &GenDataArgs, seed: u64) -> Result<ExitCode> {
    if !(a.rate.is_finite() && a.rate > 0.0) {
        return Err(Error::InvalidArgument(format!("--rate must be positive, got {}", a.rate)));
    }
    if a.clip_frames < 2 {
        return Err(Error::InvalidArgument("--clip-frames must be at least 2".into()));
    }
    let cfg = DatagenConfig {
        rate_hz: a.rate,
        ..Default::default()
    };
    let mut lib = motion_library();
    for s in &mut lib {
        s.duration_s = a.clip_frames as f64 / a.rate;
    }
    debug_assert_eq!(frame_count(lib[0].duration_s, a.rate), a.clip_frames);
    let (mut corpus, styles) = generate_corpus_from(&lib, a.in_sample, a.out_sample, seed, &cfg)?;
    for i in 0..a.shuffled_users {
        let id = user_id(a.in_sample + a.out_sample + i);
        let clips = generate_shuffled_user_from(&lib, &id, rng::child_seed(seed, &[0x5f5f, i as u64]), &cfg)?;
        corpus.users.push(UserRecord {
            user_id: id,
            group: UserGroup::InSample,
            clips,
        });
    }
    let split = split_corpus(&corpus, seed)?;
    write_corpus(&a.out, &corpus)?;
    write_json(&a.out.join(STYLES_FILE), &styles)?;
    write_json(&a.out.join(SPLIT_FILE), &split)?;
    write_json(
        &a.out.join(DATAGEN_FILE),
        &DatagenRecord {
            seed,
            in_sample: a.in_sample,
            out_sample: a.out_sample,
            shuffled_users: a.shuffled_users,
            clip_frames: a.clip_frames,
            config: &cfg,
        },
    )?;
    let in_users = corpus.users_in(UserGroup::InSample).count();
    println!("users: {} ({in_users} in-sample, {} out-of-sample)", corpus.users.len(), corpus.users.len() - in_users);
    println!("clips: {}", corpus.num_clips());
    println!(
        "split: {} train, {} in-sample test, {} out-of-sample test",
        split.train.len(),
        split.test_in_sample.len(),
        split.test_out_sample.len()
    );
    Ok(ExitCode::SUCCESS)
}

/// Reads a corpus directory together with its split manifest.
pub fn read_corpus_with_split(dir: &Path) -> Result<(Corpus, SplitSpec)> {
    let corpus = cchp_core::domain::read_corpus(dir)?;
    let split = cchp_core::domain::read_json(&dir.join(SPLIT_FILE))?;
    Ok((corpus, split))
}

pub fn read_styles(dir: &Path) -> Result<Vec<SyntheticUserStyle>> {
    cchp_core::domain::read_json(&dir.join(STYLES_FILE)).map_err(|e| match e {
        Error::Io(_) => Error::MissingModel(format!("oracle needs {}", dir.join(STYLES_FILE).display())),
        e => e,
    })
}

#[derive(Serialize)]
struct ConsistencyLine<'a> {
    user_id: &'a str,
    same_label_mean: f64,
    cross_label_mean: f64,
    t: f64,
    df: f64,
    p_value: f64,
    verdict: &'static str,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn check_consistency(a: &CheckArgs) -> Result<ExitCode> {
    let corpus = cchp_core::domain::read_corpus(&a.corpus)?;
    let users: Vec<&UserRecord> = match &a.user {
        Some(id) => vec![corpus
            .user(id)
            .ok_or_else(|| Error::InvalidArgument(format!("no user `{id}` in the corpus")))?],
        None => corpus.users.iter().collect(),
    };
    let mut out = csv::Writer::from_writer(std::io::stdout().lock());
    let mut rejected = 0;
    for u in users {
        let r = consistency_test(&u.clips)?;
        rejected += usize::from(!r.consistent);
        out.serialize(ConsistencyLine {
            user_id: &u.user_id,
            same_label_mean: mean(&r.same_label),
            cross_label_mean: mean(&r.cross_label),
            t: r.test.t,
            df: r.test.df,
            p_value: r.test.p_value,
            verdict: if r.consistent { "accepted" } else { "rejected" },
        })?;
    }
    out.flush()?;
    if rejected > 0 {
        eprintln!("{rejected} user(s) rejected");
        std::io::stderr().flush()?;
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}
