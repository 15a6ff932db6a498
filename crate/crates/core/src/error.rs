use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{location}: {message}")]
    Parse { location: String, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-positive perplexity {value} at model '{model}', context '{context}'")]
    NonPositivePerplexity {
        model: String,
        context: String,
        value: f64,
    },

    #[error("alpha too small for d: alpha={alpha}, d={d} leaves fewer than one column per tail")]
    AlphaTooSmall { alpha: f64, d: usize },

    #[error("collinear candidate (condition ratio {ratio:.3e})")]
    Collinear { ratio: f64 },

    #[error("undefined: zero rank variance")]
    ZeroRankVariance,

    #[error("zero variance for model '{0}' over the standardization pool")]
    ZeroModelVariance(String),

    #[error("encoder failure at replicate {replicate}: {message}")]
    Encoder { replicate: usize, message: String },

    #[error("encoder: {0}")]
    EncoderTransport(String),

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("missing artifact {path}: run '{stage}' first")]
    MissingArtifact { stage: String, path: PathBuf },

    #[error("artifact {path} was produced under config {found}, current config is {expected} (use --force to override)")]
    ConfigMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
