use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{context}: dimension mismatch (expected {expected}, got {actual})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{what} index {index} out of range (valid: {valid})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        valid: String,
    },

    #[error("{stage} diverged at epoch {epoch}: loss is not finite")]
    Divergence { stage: &'static str, epoch: usize },

    #[error("class {class} has no points in {dataset}")]
    EmptyClass { class: usize, dataset: String },

    #[error("class {class} has {available} points, {needed} required")]
    InsufficientPoints {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("invalid eta: 1 - alpha_bar(prev) - sigma^2 = {value} < 0 at step {step}")]
    InvalidEta { step: usize, value: f64 },

    #[error("malformed file {}: {reason}", path.display())]
    Malformed { path: PathBuf, reason: String },

    #[error("{}: payload length mismatch, expected {expected} bytes, found {actual}", path.display())]
    PayloadLength {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("{}: shape mismatch, {reason}", path.display())]
    ShapeMismatch { path: PathBuf, reason: String },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("architecture {arch}, trial {trial}: {source}")]
    Trial {
        arch: String,
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
