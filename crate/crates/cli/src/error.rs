use thiserror::Error;

use threshold_core::data::DataError;
use threshold_core::ingest::IngestError;
use threshold_core::model::ModelError;
use threshold_core::report::ReportError;
use threshold_core::synth::SynthError;

/// Failure of a command, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("convergence failure: max split R-hat {max_rhat:.4} exceeds {threshold} (diagnostics written to {written})")]
    Convergence {
        max_rhat: f64,
        threshold: f64,
        written: String,
    },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Convergence { .. } => 4,
        }
    }

    /// The message without the class prefix.
    pub fn message(&self) -> String {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Other(m) => m.clone(),
            other => other.to_string(),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Hyperparameter { .. } => CliError::Config(e.to_string()),
            ModelError::TestsExceedPopulation { .. } | ModelError::EmptyIndex => {
                CliError::Data(e.to_string())
            }
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Parse { .. } | SynthError::Discrete(_) => CliError::Config(e.to_string()),
            SynthError::Io { .. } => CliError::Other(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::ZeroWeight
            | ReportError::NoWhite
            | ReportError::DrawsFormat(_)
            | ReportError::Shape { .. } => CliError::Data(e.to_string()),
            ReportError::Grid(_) => CliError::Config(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<hmc::HmcError> for CliError {
    fn from(e: hmc::HmcError) -> Self {
        match e {
            hmc::HmcError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}
