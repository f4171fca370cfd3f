use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use iqal_core::active::LoopError;

use crate::api::ErrorBody;

/// Every failure reaches the client as `{code, message}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn unknown_dataset(name: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "unknown_dataset",
            format!("dataset {name:?} not found"),
        )
    }

    pub fn wrong_state(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "wrong_state", message)
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_submission", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<LoopError> for ApiError {
    fn from(e: LoopError) -> Self {
        let msg = e.to_string();
        match e {
            LoopError::WrongPhase { .. } => Self::wrong_state(msg),
            LoopError::NotOutstanding(_) | LoopError::DuplicateSubmission(_) | LoopError::MissingLabels(_) => {
                Self::invalid(msg)
            }
            LoopError::InvalidConfig(_) | LoopError::PoolTooSmall { .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", msg)
            }
            _ => Self::internal(msg),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}
