//! Error classes and their exit codes.

use lscale_core::analysis::AnalysisError;
use lscale_core::design::DesignError;
use lscale_core::encoder::EncoderError;
use lscale_core::matio::MatioError;
use lscale_core::preprocess::PreprocessError;
use lscale_core::reliability::IscError;
use lscale_core::stats::StatsError;
use lscale_core::synth::SynthError;
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Bad arguments, missing or malformed inputs, inconsistent shapes.
    Validation,
    /// Numeric failure or I/O trouble while computing or writing.
    Runtime,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Validation,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Runtime,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Validation => 2,
            Kind::Runtime => 3,
        }
    }

    pub fn to_json(&self) -> String {
        let kind = match self.kind {
            Kind::Validation => "validation",
            Kind::Runtime => "runtime",
        };
        json!({"error": {"kind": kind, "code": self.exit_code(), "message": self.message}}).to_string()
    }

    pub fn context(self, what: &str) -> Self {
        CliError {
            kind: self.kind,
            message: format!("{what}: {}", self.message),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<MatioError> for CliError {
    fn from(e: MatioError) -> Self {
        // read failures mean missing or malformed inputs; writes go through `io_write`
        CliError::validation(e.to_string())
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<DesignError> for CliError {
    fn from(e: DesignError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<EncoderError> for CliError {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::NonFinite(_) | EncoderError::AllAlphasFailed { .. } => CliError::runtime(e.to_string()),
            _ => CliError::validation(e.to_string()),
        }
    }
}

impl From<IscError> for CliError {
    fn from(e: IscError) -> Self {
        match e {
            IscError::Encoder(inner) => inner.into(),
            other => CliError::validation(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Stats(StatsError::TooFewPoints { .. } | StatsError::LengthMismatch(..)) => {
                CliError::validation(e.to_string())
            }
            AnalysisError::Stats(_) => CliError::runtime(e.to_string()),
            other => CliError::validation(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::ZeroVariance => CliError::runtime(e.to_string()),
            other => CliError::validation(other.to_string()),
        }
    }
}

/// Failure writing an output.
pub fn io_write(e: MatioError) -> CliError {
    CliError::runtime(e.to_string())
}
