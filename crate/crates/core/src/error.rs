use thiserror::Error;

use crate::types::{ClassId, SampleId};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("memory capacity {capacity} exceeded")]
    CapacityExceeded { capacity: usize },

    #[error("sample id {0} already stored in memory")]
    DuplicateId(SampleId),

    #[error("sample id {0} not present in memory")]
    UnknownId(SampleId),

    #[error("example {0} has an empty label")]
    EmptyLabel(SampleId),

    #[error("example {id} has non-finite features")]
    NonFiniteFeatures { id: SampleId },

    #[error("running statistics contain no observed class")]
    EmptyStats,

    #[error("no class in the sample label has been observed: class {0}")]
    UnobservedClass(ClassId),

    #[error("no class occupies more memory than its target share")]
    NoOverOccupiedClass,

    #[error("no stored sample carries class {0}")]
    EmptyCandidateSet(ClassId),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("infeasible grouping: {0}")]
    Infeasible(String),

    #[error("classes with too few images for the test split: {0:?}")]
    DeficientClasses(Vec<String>),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("training diverged: non-finite loss {0}")]
    NonFiniteLoss(f64),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig { .. }
                | Error::Infeasible(_)
                | Error::DeficientClasses(_)
                | Error::Parse { .. }
                | Error::EmptyLabel(_)
                | Error::NonFiniteFeatures { .. }
                | Error::EmptyInput(_)
                | Error::Json(_)
        )
    }
}
