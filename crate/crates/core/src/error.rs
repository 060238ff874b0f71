use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("optimization diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("degenerate scale: all embedded points coincide")]
    DegenerateScale,

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("perplexity calibration failed for point {point}: {reason}")]
    Calibration { point: usize, reason: String },

    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("cluster {cluster}: {source}")]
    InCluster {
        cluster: usize,
        #[source]
        source: Box<Error>,
    },

    /// A configuration value is missing or out of range; `field` is a dotted
    /// path such as `clustering.k`.
    #[error("config error at {field}: {message}")]
    Config { field: String, message: String },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors a caller fixes by changing its inputs or settings
    /// rather than by retrying.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Parameter(_))
    }

    pub(crate) fn in_cluster(cluster: usize, source: Error) -> Self {
        Error::InCluster {
            cluster,
            source: Box::new(source),
        }
    }
}
