use std::error::Error as StdError;

use enrichkit::gateway::GatewayError;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{failed} of {total} {unit} failed, over the failure budget of {budget}")]
    FailureBudget {
        unit: &'static str,
        failed: usize,
        total: usize,
        budget: f64,
    },
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("{context}: {reason}")]
    Io { context: String, reason: String },
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn io(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            context: context.to_string(),
            reason: e.to_string(),
        }
    }

    /// Classifies a module error: anything caused by a gateway call is a
    /// backend failure, everything else a validation error.
    pub fn from_module(context: &str, e: &(dyn StdError + 'static)) -> Self {
        let mut cur: Option<&(dyn StdError + 'static)> = Some(e);
        while let Some(err) = cur {
            if let Some(g) = err.downcast_ref::<GatewayError>() {
                return match g {
                    GatewayError::InvalidRequest(_) => CliError::Validation(format!("{context}: {e}")),
                    _ => CliError::Backend(format!("{context}: {e}")),
                };
            }
            cur = err.source();
        }
        CliError::Validation(format!("{context}: {e}"))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io { .. } => 1,
            CliError::FailureBudget { .. } | CliError::Backend(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::FailureBudget { .. } => "failure_budget",
            CliError::Backend(_) => "backend",
            CliError::Io { .. } => "io",
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_json(&self) -> String {
        let mut v = json!({
            "error": self.kind(),
            "detail": self.to_string(),
            "exit_code": self.exit_code(),
        });
        if let CliError::FailureBudget { failed, total, budget, .. } = self {
            v["failed"] = json!(failed);
            v["total"] = json!(total);
            v["budget"] = json!(budget);
        }
        v.to_string()
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
