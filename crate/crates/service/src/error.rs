use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use triage_core::engine::EngineError;

pub const SESSION_NOT_FOUND: &str = "session_not_found";
pub const SESSION_CLOSED: &str = "session_closed";
pub const EMPTY_MESSAGE: &str = "empty_message";
pub const BACKEND_UNAVAILABLE: &str = "backend_unavailable";
pub const VALIDATION_FAILED: &str = "validation_failed";
pub const WRONG_PHASE: &str = "wrong_phase";
pub const INTERNAL_ERROR: &str = "internal_error";

/// Every code the service can return.
pub const ERROR_CODES: [&str; 7] =
    [SESSION_NOT_FOUND, SESSION_CLOSED, EMPTY_MESSAGE, BACKEND_UNAVAILABLE, VALIDATION_FAILED, WRONG_PHASE, INTERNAL_ERROR];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub code: String,
    pub message: String,
    pub http_status: u16,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { code: code.to_string(), message: message.into(), http_status: status.as_u16() }
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, SESSION_NOT_FOUND, format!("no session with id {id}"))
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, VALIDATION_FAILED, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, INTERNAL_ERROR, message)
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let msg = e.to_string();
        match e {
            EngineError::SessionClosed => Self::new(StatusCode::CONFLICT, SESSION_CLOSED, msg),
            EngineError::WrongPhase { .. } => Self::new(StatusCode::CONFLICT, WRONG_PHASE, msg),
            EngineError::EmptyMessage => Self::new(StatusCode::UNPROCESSABLE_ENTITY, EMPTY_MESSAGE, msg),
            EngineError::ReplyPending | EngineError::InvalidSessionId(_) => Self::validation(msg),
            EngineError::Backend(_) | EngineError::EmptyReply | EngineError::Summary(_) => {
                Self::new(StatusCode::BAD_GATEWAY, BACKEND_UNAVAILABLE, msg)
            }
            EngineError::History(_)
            | EngineError::CorruptRecord { .. }
            | EngineError::InvalidConfig(_)
            | EngineError::Io(_) => Self::internal(msg),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}
