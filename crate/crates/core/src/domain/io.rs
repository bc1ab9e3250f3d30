use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_clip, Corpus, HandlingClip, UserGroup, UserRecord};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CLIPS_DIR: &str = "clips";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestUser {
    pub user_id: String,
    pub group: UserGroup,
    pub file: String,
    pub clips: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub rate_hz: f64,
    pub users: Vec<ManifestUser>,
}

/// Writes clips as JSON lines, one clip per line.
pub fn write_clips<W: Write>(w: W, clips: &[HandlingClip]) -> Result<()> {
    let mut w = BufWriter::new(w);
    for c in clips {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_clips<R: BufRead>(r: R) -> Result<Vec<HandlingClip>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let clip: HandlingClip = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
        let report = validate_clip(&clip);
        if !report.is_valid() {
            return Err(Error::Parse(format!(
                "line {}: clip {} is invalid: {:?}",
                i + 1,
                clip.clip_id,
                report.issues
            )));
        }
        out.push(clip);
    }
    Ok(out)
}

fn safe_file_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir.join(CLIPS_DIR))?;
    let mut users = Vec::new();
    for u in &corpus.users {
        let file = format!("{CLIPS_DIR}/{}.jsonl", safe_file_name(&u.user_id));
        write_clips(File::create(dir.join(&file))?, &u.clips)?;
        users.push(ManifestUser {
            user_id: u.user_id.clone(),
            group: u.group,
            file,
            clips: u.clips.len(),
        });
    }
    let manifest = CorpusManifest {
        rate_hz: corpus.rate_hz,
        users,
    };
    let mut f = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let manifest: CorpusManifest =
        serde_json::from_reader(BufReader::new(File::open(dir.join(MANIFEST_FILE))?))?;
    let mut users = Vec::with_capacity(manifest.users.len());
    for u in manifest.users {
        let clips = read_clips(BufReader::new(File::open(dir.join(&u.file))?))?;
        if clips.len() != u.clips {
            return Err(Error::Parse(format!(
                "{} lists {} clips but holds {}",
                u.file,
                u.clips,
                clips.len()
            )));
        }
        if let Some(c) = clips.iter().find(|c| c.user_id != u.user_id) {
            return Err(Error::Parse(format!(
                "clip {} in {} belongs to {}",
                c.clip_id, u.file, c.user_id
            )));
        }
        users.push(UserRecord {
            user_id: u.user_id,
            group: u.group,
            clips,
        });
    }
    Ok(Corpus {
        rate_hz: manifest.rate_hz,
        users,
    })
}

/// Reads a JSON document from `path`.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Writes a pretty-printed JSON document to `path`.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}
