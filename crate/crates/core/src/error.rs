//! Error type shared by every module of the lab.

use thiserror::Error;

/// Errors raised while configuring, simulating, integrating or analysing.
///
/// The variants map onto the CLI exit codes: simulation faults exit with 2,
/// quadrature accuracy faults with 3 and configuration problems with 4.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("simulation fault on stream {stream} at step {step}: {reason}")]
    Simulation {
        stream: u64,
        step: u64,
        reason: String,
    },

    #[error("quadrature accuracy fault: {reason} (coarse = {coarse:e}, fine = {fine:e})")]
    Accuracy {
        reason: String,
        coarse: f64,
        fine: f64,
    },

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl LabError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        LabError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn analysis(reason: impl Into<String>) -> Self {
        LabError::Analysis(reason.into())
    }

    /// Process exit code associated with this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Simulation { .. } => 2,
            LabError::Accuracy { .. } => 3,
            LabError::Config { .. } => 4,
            LabError::Analysis(_) | LabError::Io(_) | LabError::Csv(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
