use std::fmt;

use thiserror::Error;

/// Errors raised by the casemix library.
#[derive(Debug, Error)]
pub enum CasemixError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("unsupported document version {found:?} (expected {expected:?})")]
    Version { expected: String, found: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<CasemixError>,
    },
}

impl CasemixError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CasemixError::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl fmt::Display) -> Self {
        CasemixError::Parse {
            location: location.into(),
            message: message.to_string(),
        }
    }

    /// Wraps an error with the pipeline stage that produced it. Already-tagged
    /// errors keep their innermost tag.
    pub fn at_stage(self, stage: Stage) -> Self {
        match self {
            e @ CasemixError::Stage { .. } => e,
            other => CasemixError::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The pipeline stage tag, if any.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            CasemixError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

impl From<csv::Error> for CasemixError {
    fn from(err: csv::Error) -> Self {
        let location = match err.position() {
            Some(pos) => format!("line {}", pos.line()),
            None => "csv".to_string(),
        };
        if let csv::ErrorKind::Io(_) = err.kind() {
            return match err.into_kind() {
                csv::ErrorKind::Io(io) => CasemixError::Io(io),
                _ => unreachable!(),
            };
        }
        CasemixError::parse(location, err)
    }
}

impl From<serde_json::Error> for CasemixError {
    fn from(err: serde_json::Error) -> Self {
        if err.is_io() {
            return CasemixError::Io(err.into());
        }
        CasemixError::parse(format!("line {} column {}", err.line(), err.column()), err)
    }
}

/// Pipeline stages used to tag failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Preprocess,
    Clustering,
    FactorTrees,
    FinalTargets,
    Split,
    Oversample,
    FinalTree,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Preprocess => "preprocess",
            Stage::Clustering => "clustering",
            Stage::FactorTrees => "factor_trees",
            Stage::FinalTargets => "final_targets",
            Stage::Split => "split",
            Stage::Oversample => "oversample",
            Stage::FinalTree => "final_tree",
            Stage::Evaluate => "evaluate",
        };
        f.write_str(name)
    }
}

pub type Result<T, E = CasemixError> = std::result::Result<T, E>;
