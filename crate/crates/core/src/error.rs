use cchp_autodiff::TensorError;
use thiserror::Error;

/// Errors surfaced by the library. Variant names double as the
/// machine-readable error names printed by the command line tool.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Shape(String),
    #[error("{0}")]
    Numeric(String),
    #[error("sequence is empty")]
    EmptySequence,
    #[error("clip has {0} frames; at least 2 are needed")]
    DegenerateClip(usize),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("split infeasible: {0}")]
    SplitInfeasible(String),
    #[error("could not draw an independent gesture basis after {0} attempts")]
    StyleGenFailure(usize),
    #[error("corpus infeasible: {0}")]
    CorpusInfeasible(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("episode infeasible: {0}")]
    EpisodeInfeasible(String),
    #[error("training diverged at step {step}")]
    TrainingDiverged { step: u64 },
    #[error("missing model: {0}")]
    MissingModel(String),
    #[error("clip spans {span:.3}s, shorter than the {window:.3}s window")]
    ClipTooShort { span: f64, window: f64 },
    #[error("context is empty")]
    EmptyContext,
    #[error("stream session: {0}")]
    Session(String),
    #[error("target operations are required")]
    MissingLabels,
    #[error("degenerate keypoint configuration (residual {residual:.3e} m)")]
    DegenerateFit { residual: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable identifier for the error kind.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Shape(_) => "ShapeError",
            Error::Numeric(_) => "NumericError",
            Error::EmptySequence => "EmptySequence",
            Error::DegenerateClip(_) => "DegenerateClip",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::SplitInfeasible(_) => "SplitInfeasible",
            Error::StyleGenFailure(_) => "StyleGenFailure",
            Error::CorpusInfeasible(_) => "CorpusInfeasible",
            Error::InsufficientData(_) => "InsufficientData",
            Error::EpisodeInfeasible(_) => "EpisodeInfeasible",
            Error::TrainingDiverged { .. } => "TrainingDiverged",
            Error::MissingModel(_) => "MissingModel",
            Error::ClipTooShort { .. } => "ClipTooShort",
            Error::EmptyContext => "EmptyContext",
            Error::Session(_) => "SessionError",
            Error::MissingLabels => "MissingLabels",
            Error::DegenerateFit { .. } => "DegenerateFit",
            Error::Parse(_) => "ParseError",
            Error::Io(_) => "IoError",
        }
    }
}

impl From<TensorError> for Error {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Numeric(_) => Error::Numeric(e.to_string()),
            TensorError::Io(io) => Error::Io(io),
            TensorError::Format(m) => Error::Parse(m),
            other => Error::Shape(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
