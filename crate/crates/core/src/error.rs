use std::path::PathBuf;

use thiserror::Error;

use crate::level_system::LevelId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("incomplete doublet {0}: both parity partners must exist")]
    IncompleteDoublet(String),

    #[error("unknown level {0}")]
    UnknownLevel(LevelId),

    #[error("unknown transition label `{0}`")]
    UnknownTransition(String),

    #[error("doublets {lower} and {upper} are not connected by a c-type transition")]
    NotConnected { lower: String, upper: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid level graph:\n{0}")]
    InvalidGraph(String),

    #[error("invalid pulse sequence: {0}")]
    InvalidSequence(String),

    #[error("pulse `{0}` addresses nothing")]
    AddressesNothing(String),

    #[error("no consistent rotating frame: {0}")]
    InconsistentFrame(String),

    #[error("integration step {step} us too large: {cycles:.4} cycles per step exceeds {limit}")]
    StepTooLarge { step: f64, cycles: f64, limit: f64 },

    #[error("aliasing risk: {0}")]
    Aliasing(String),

    #[error("unstable filter design: {0}")]
    UnstableFilter(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("scan failed: {failed} of {total} points failed (first: {first})")]
    ScanFailed { failed: usize, total: usize, first: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
