use thiserror::Error;

/// Errors raised by the model, training and analysis routines.
#[derive(Debug, Error)]
pub enum SmrcError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("spectral radius estimation did not converge after {iterations} iterations")]
    SpectralRadiusNotConverged { iterations: usize },

    #[error("non-finite reservoir state at timestep {step}")]
    NonFiniteState { step: usize },

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("sequence generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },

    #[error("all {} restarts failed: {}", .0.len(), .0.join("; "))]
    AllRestartsFailed(Vec<String>),
}

pub type Result<T> = std::result::Result<T, SmrcError>;
