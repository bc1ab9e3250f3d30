//! Checkpointable model kinds behind one handle.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use cchp_autodiff::checkpoint::read_checkpoint;
use serde::{Deserialize, Serialize};

use crate::baselines::{LstmConfig, LstmRegressor, KIND_LSTM};
use crate::domain::HandlingClip;
use crate::error::{Error, Result};
use crate::model::{CchpConfig, CchpModel, Normalizer, KIND_CCHP, KIND_RANP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cchp,
    Lstm,
    Ranp,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cchp => KIND_CCHP,
            ModelKind::Lstm => KIND_LSTM,
            ModelKind::Ranp => KIND_RANP,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            KIND_CCHP => Ok(ModelKind::Cchp),
            KIND_LSTM => Ok(ModelKind::Lstm),
            KIND_RANP => Ok(ModelKind::Ranp),
            _ => Err(Error::InvalidArgument(format!("unknown model kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub enum AnyModel {
    Cchp(CchpModel),
    Lstm(LstmRegressor),
}

impl AnyModel {
    /// A freshly initialized model whose normalizer is fitted on `train`.
    pub fn init<'a>(
        kind: ModelKind,
        train: impl IntoIterator<Item = &'a HandlingClip> + Clone,
        seed: u64,
    ) -> Result<Self> {
        let n = Normalizer::fit(train)?;
        Ok(match kind {
            ModelKind::Cchp => AnyModel::Cchp(CchpModel::new(CchpConfig::default(), n, seed)?),
            ModelKind::Ranp => AnyModel::Cchp(CchpModel::new(CchpConfig::ranp(), n, seed)?),
            ModelKind::Lstm => AnyModel::Lstm(LstmRegressor::new(LstmConfig::default(), n, seed)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Cchp(m) if m.config.autoregressive => ModelKind::Cchp,
            AnyModel::Cchp(_) => ModelKind::Ranp,
            AnyModel::Lstm(_) => ModelKind::Lstm,
        }
    }

    pub fn write<W: Write, T: Serialize>(&self, w: W, extra: &T) -> Result<()> {
        match self {
            AnyModel::Cchp(m) => m.save(w, extra),
            AnyModel::Lstm(m) => m.save(w, extra),
        }
    }

    pub fn read<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<(Self, T)> {
        let (kind, _, _) = read_checkpoint(&mut &bytes[..])?;
        if kind == KIND_LSTM {
            let (m, e) = LstmRegressor::load(bytes)?;
            Ok((AnyModel::Lstm(m), e))
        } else {
            let (m, e) = CchpModel::load(bytes)?;
            Ok((AnyModel::Cchp(m), e))
        }
    }

    pub fn save<T: Serialize>(&self, path: &Path, extra: &T) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w, extra)?;
        w.flush()?;
        Ok(())
    }

    pub fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(Self, T)> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingModel(path.display().to_string()),
            _ => Error::Io(e),
        })?)
        .read_to_end(&mut bytes)?;
        Self::read(&bytes)
    }
}
