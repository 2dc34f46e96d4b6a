use std::fmt;

use thiserror::Error;

/// A single validation failure, addressed by its dotted path in the config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("invalid config:\n{}", join_fields(.0))]
    Config(Vec<FieldError>),

    #[error("{module} failed (round {round}, cluster {cluster}): {source}")]
    Pipeline {
        module: &'static str,
        round: usize,
        cluster: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{module} failed: {source}")]
    Stage {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn join_fields(errs: &[FieldError]) -> String {
    errs.iter()
        .map(|e| format!("  - {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(expected: usize, got: usize) -> Self {
        Error::Shape { expected, got }
    }

    /// Wraps an error from a set-up stage that runs before any round.
    pub fn in_stage(self, module: &'static str) -> Self {
        Error::Stage {
            module,
            source: Box::new(self),
        }
    }

    /// Wraps a module error with the pipeline position it occurred at.
    pub fn in_pipeline(self, module: &'static str, round: usize, cluster: usize) -> Self {
        Error::Pipeline {
            module,
            round,
            cluster,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
