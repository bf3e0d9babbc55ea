use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Core(#[from] drkf_core::Error),

    #[error("invalid scenario: {0}")]
    Invalid(String),

    #[error("run {run} failed: {source}")]
    Run {
        run: usize,
        #[source]
        source: Box<SimError>,
    },

    #[error("state trajectory left the finite range at k={k}")]
    Divergence { k: usize },

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SimError {
    /// Validation problems are distinguished from runtime aborts by the CLI.
    pub fn is_validation(&self) -> bool {
        match self {
            SimError::Invalid(_) | SimError::Config { .. } => true,
            SimError::Core(e) => !matches!(
                e,
                drkf_core::Error::Step { .. }
                    | drkf_core::Error::Overflow { .. }
                    | drkf_core::Error::SingularInnovation { .. }
                    | drkf_core::Error::InflatedNotPd { .. }
                    | drkf_core::Error::CandidateNotPd { .. }
            ),
            _ => false,
        }
    }
}

pub type SimResult<T> = Result<T, SimError>;
