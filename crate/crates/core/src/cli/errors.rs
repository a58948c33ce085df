//! Mapping from library errors to exit codes.

use crate::eval::EvalError;
use crate::finetune::FinetuneError;
use crate::gateway::GatewayError;
use crate::ingest::IngestError;
use crate::model::ModelError;
use crate::review::ReviewError;
use crate::sim::SimError;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_BUDGET: i32 = 2;
pub const EXIT_STORE: i32 = 3;
pub const EXIT_INTERRUPTED: i32 = 130;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        let kind = match code {
            EXIT_USAGE => "invalid_input",
            EXIT_BUDGET => "budget_exceeded",
            EXIT_STORE => "io_failure",
            EXIT_INTERRUPTED => "interrupted",
            _ => "error",
        };
        CliError { code, kind, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }

    pub fn store(message: impl Into<String>) -> Self {
        Self::new(EXIT_STORE, message)
    }

    pub fn context(mut self, prefix: impl std::fmt::Display) -> Self {
        self.message = format!("{prefix}: {}", self.message);
        self
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::store(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::store(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let code = match e {
            ModelError::Io(_) | ModelError::Json(_) | ModelError::ManifestLine { .. } => EXIT_STORE,
            _ => EXIT_USAGE,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let code = match e {
            SimError::Io(_) | SimError::Json(_) | SimError::Image(_) => EXIT_STORE,
            _ => EXIT_USAGE,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Model(m) => m.into(),
            IngestError::Io(_) | IngestError::DecoderFailure { .. } | IngestError::Image { .. } => {
                CliError::store(e.to_string())
            }
            _ => CliError::usage(e.to_string()),
        }
    }
}

impl From<FinetuneError> for CliError {
    fn from(e: FinetuneError) -> Self {
        match e {
            FinetuneError::Model(m) => m.into(),
            FinetuneError::Io(_) | FinetuneError::Json(_) | FinetuneError::ImageReadFailure { .. } => {
                CliError::store(e.to_string())
            }
            _ => CliError::usage(e.to_string()),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        let code = match e {
            GatewayError::BudgetExceeded { .. } => EXIT_BUDGET,
            GatewayError::MissingFrame { .. } | GatewayError::Timeout { .. } | GatewayError::RemoteError { .. } => {
                EXIT_STORE
            }
            _ => EXIT_USAGE,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::Backend(g) => g.into(),
            EvalError::BudgetExceeded { .. } => CliError::new(EXIT_BUDGET, e.to_string()),
            EvalError::Interrupted { .. } => CliError::new(EXIT_INTERRUPTED, e.to_string()),
            EvalError::CorruptTranscript { .. } | EvalError::Io(_) | EvalError::Json(_) => CliError::store(e.to_string()),
            _ => CliError::usage(e.to_string()),
        }
    }
}

impl From<ReviewError> for CliError {
    fn from(e: ReviewError) -> Self {
        match e {
            ReviewError::Model(m) => m.into(),
            ReviewError::Eval(x) => x.into(),
            ReviewError::CorruptLog { .. } | ReviewError::Io(_) | ReviewError::Json(_) => CliError::store(e.to_string()),
            _ => CliError::usage(e.to_string()),
        }
    }
}
