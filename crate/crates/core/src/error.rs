use std::path::PathBuf;

use crate::chain::ValidationReport;

/// Failure modes shared by every pipeline stage.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("chain failed validation: {0}")]
    Validation(ValidationReport),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("state {state} has no outgoing edge in the support graph")]
    DeadEnd { state: usize },

    #[error("linear system is singular: {0}")]
    Singular(String),

    #[error("absorption episode from state {start} exceeded {cap} steps")]
    EpisodeCap { start: usize, cap: usize },

    #[error("non-finite iterate at step {iteration}")]
    Diverged { iteration: u64 },

    #[error("power iteration did not converge after {iterations} steps (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("gauge maps disagree: {0}")]
    GaugeMismatch(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage labels peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Attach a stage label to an error.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
