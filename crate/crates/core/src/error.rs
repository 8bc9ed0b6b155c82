use std::path::PathBuf;

use thiserror::Error;

use crate::training::EpochRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping of errors, used by the command line for exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorFamily {
    Config,
    Data,
    Training,
    Io,
}

impl ErrorFamily {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorFamily::Config => 2,
            ErrorFamily::Data => 3,
            ErrorFamily::Training => 4,
            ErrorFamily::Io => 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset root {0} does not exist")]
    MissingDataset(PathBuf),

    #[error("{split} split is missing class directory {path}")]
    MissingClassDirectory { split: String, path: PathBuf },

    #[error("class directory {path} contains no readable images")]
    EmptyClass { path: PathBuf },

    #[error("cannot decode image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("split of class {class} with ratio {ratio} leaves one side empty ({train} train / {val} val)")]
    DegenerateSplit {
        class: String,
        ratio: f64,
        train: usize,
        val: usize,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("affine transform is singular (determinant {0})")]
    SingularTransform(f64),

    #[error("unknown node `{node}`; valid truncation points: {}", valid.join(", "))]
    UnknownNode { node: String, valid: Vec<String> },

    #[error("weights tensor `{tensor}` has shape {found:?}, architecture expects {expected:?}")]
    WeightsMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("weights archive is missing tensor `{0}`")]
    MissingTensor(String),

    #[error("malformed weights archive: {0}")]
    WeightsFormat(String),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("non-finite gradient encountered; step aborted")]
    NonFiniteGradient,

    #[error("non-finite loss in epoch {epoch}; {} completed epochs preserved", records.len())]
    NonFiniteLoss { epoch: usize, records: Vec<EpochRecord> },

    #[error("cannot evaluate metrics over zero samples")]
    EmptyEvaluation,

    #[error("need at least {needed} epochs of history, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("plot rendering failed: {0}")]
    Plot(String),
}

impl Error {
    pub fn family(&self) -> ErrorFamily {
        use Error::*;
        match self {
            InvalidConfig(_) | UnknownNode { .. } | Unsupported(_) | Parse { .. } => ErrorFamily::Config,
            MissingDataset(_)
            | MissingClassDirectory { .. }
            | EmptyClass { .. }
            | Decode { .. }
            | DegenerateSplit { .. }
            | EmptyDataset
            | WeightsMismatch { .. }
            | MissingTensor(_)
            | WeightsFormat(_) => ErrorFamily::Data,
            SingularTransform(_)
            | ShapeMismatch { .. }
            | NonFiniteGradient
            | NonFiniteLoss { .. }
            | EmptyEvaluation
            | InsufficientHistory { .. } => ErrorFamily::Training,
            Io { .. } | Plot(_) => ErrorFamily::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
