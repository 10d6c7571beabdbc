use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("measurement failed at file_size={file_size_kb} KB, x={x_kbps} KBps, coverage={coverage}: {reason}")]
    Measurement {
        file_size_kb: f64,
        x_kbps: f64,
        coverage: f64,
        reason: String,
    },

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("parse error at line {line} (byte offset {offset}): {message}")]
    Parse {
        line: usize,
        offset: usize,
        message: String,
    },

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("no data: {0}")]
    NoData(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable identifier, used by the CLI error document.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Contract(_) => "contract",
            Error::Fit(_) => "fit",
            Error::Measurement { .. } => "measurement",
            Error::ModelMismatch(_) => "model_mismatch",
            Error::Parse { .. } => "parse",
            Error::TooLarge(_) => "too_large",
            Error::Infeasible(_) => "infeasible",
            Error::NoData(_) => "no_data",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
