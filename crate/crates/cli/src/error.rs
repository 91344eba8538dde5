//! The single error shape returned by every failing CLI command and HTTP
//! request.

use exforge_core::gateway::GatewayError;
use exforge_core::grid::GridError;
use exforge_core::prompt::PromptError;
use exforge_core::rubric::RubricError;
use exforge_core::sandbox::SandboxError;
use exforge_core::store::StoreError;
use exforge_core::Error as CoreError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Validation,
    NotFound,
    Conflict,
    BackendUnavailable,
    BudgetExhausted,
    Unauthorized,
    Interrupted,
    Internal,
}

impl ErrorCode {
    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::Validation => 400,
            ErrorCode::Unauthorized => 401,
            ErrorCode::NotFound => 404,
            ErrorCode::Conflict => 409,
            ErrorCode::BudgetExhausted => 422,
            ErrorCode::BackendUnavailable => 503,
            ErrorCode::Interrupted | ErrorCode::Internal => 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{message}")]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            details: None,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Validation, message)
    }

    pub fn not_found(kind: &str, id: &str) -> Self {
        Self::new(ErrorCode::NotFound, format!("{kind} {id} not found"))
            .with_details(json!({ "kind": kind, "id": id }))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }
}

impl From<PromptError> for ApiError {
    fn from(e: PromptError) -> Self {
        ApiError::validation(e.to_string())
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        let message = e.to_string();
        match e {
            GatewayError::InvalidConfig(_) => ApiError::validation(message),
            GatewayError::BackendUnavailable { attempts, .. } => {
                ApiError::new(ErrorCode::BackendUnavailable, message)
                    .with_details(json!({ "attempts": attempts }))
            }
            GatewayError::CassetteMiss {
                prompt_digest,
                config_digest,
            } => ApiError::new(ErrorCode::BackendUnavailable, message).with_details(json!({
                "prompt_digest": prompt_digest,
                "config_digest": config_digest,
            })),
            GatewayError::Storage(_) => ApiError::internal(message),
        }
    }
}

impl From<SandboxError> for ApiError {
    fn from(e: SandboxError) -> Self {
        let message = e.to_string();
        match e {
            SandboxError::LaunchFailure(_) => ApiError::new(ErrorCode::BackendUnavailable, message),
            SandboxError::Precondition(_) => ApiError::validation(message),
            SandboxError::Io(_) => ApiError::internal(message),
        }
    }
}

impl From<RubricError> for ApiError {
    fn from(e: RubricError) -> Self {
        let message = e.to_string();
        match e {
            RubricError::Sandbox(e) => e.into(),
            RubricError::Precondition(_) | RubricError::Validation(_) => {
                ApiError::validation(message)
            }
            RubricError::Conflict(_) => ApiError::new(ErrorCode::Conflict, message),
            RubricError::Exhausted { attempts } => {
                let tried: Vec<Value> = attempts
                    .iter()
                    .map(|a| json!({ "attempt": a.attempt, "bundle_id": a.bundle.id, "tests_pass": a.report.tests_pass }))
                    .collect();
                ApiError::new(ErrorCode::BudgetExhausted, message)
                    .with_details(json!({ "attempts": tried }))
            }
            RubricError::Aborted { source, attempts } => {
                let mut inner = ApiError::from(*source);
                inner.message = format!("after {} attempt(s): {}", attempts.len(), inner.message);
                inner
            }
        }
    }
}

impl From<GridError> for ApiError {
    fn from(e: GridError) -> Self {
        let message = e.to_string();
        match e {
            GridError::InvalidSpec(_) => ApiError::validation(message),
            GridError::Checkpoint { .. } => ApiError::internal(message),
            GridError::Infrastructure(e) => e.into(),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::NotFound { class, id } => ApiError::not_found(class, &id),
            StoreError::Reference(_) => ApiError::new(ErrorCode::NotFound, message),
            StoreError::Integrity(_) | StoreError::InvalidId(_) => ApiError::validation(message),
            StoreError::Rubric(e) => e.into(),
            StoreError::Explain(_) => ApiError::validation(message),
            StoreError::Io { .. }
            | StoreError::Malformed { .. }
            | StoreError::SchemaVersion { .. }
            | StoreError::Archive(_) => ApiError::internal(message),
        }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Prompt(e) => e.into(),
            CoreError::Gateway(e) => e.into(),
            CoreError::Sandbox(e) => e.into(),
            CoreError::Rubric(e) => e.into(),
            CoreError::Explain(e) => ApiError::validation(e.to_string()),
            CoreError::Grid(e) => e.into(),
            CoreError::Store(e) => e.into(),
        }
    }
}
