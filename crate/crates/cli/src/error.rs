use ahb_core::data::DataError;
use ahb_core::predictor::PredictorError;
use ahb_core::simulation::SimError;
use thiserror::Error;

/// Failure classes mapped onto the exit-code contract: 2 for configuration
/// problems, 3 when every unit is infeasible, 4 for I/O.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    AllInfeasible(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::AllInfeasible(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> Self {
        CliError::Io(msg.into())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<PredictorError> for CliError {
    fn from(e: PredictorError) -> Self {
        match e {
            PredictorError::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Data(inner) => inner.into(),
            SimError::Predictor(inner) => inner.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
