use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use thiserror::Error;

use dfa_core::DfaError;

use crate::api::ErrorBody;

/// Seconds a client should wait before polling a pending job again.
pub const RETRY_AFTER_SECS: u64 = 1;

#[derive(Debug, Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub allowed: Vec<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), allowed: Vec::new() }
    }

    pub fn with_allowed<S: ToString>(mut self, allowed: impl IntoIterator<Item = S>) -> Self {
        self.allowed = allowed.into_iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id}"))
    }

    pub fn job_pending() -> Self {
        Self::new(StatusCode::ACCEPTED, "job_pending", "finetuning is still running").with_allowed(["eval"])
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody { code: self.code.to_string(), message: self.message.clone(), allowed: self.allowed.clone() }
    }
}

impl From<DfaError> for ApiError {
    fn from(e: DfaError) -> Self {
        let message = e.to_string();
        match e {
            DfaError::PhaseViolation { allowed, .. } => {
                Self::new(StatusCode::CONFLICT, "phase_violation", message).with_allowed(allowed)
            }
            DfaError::LengthMismatch { .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "length_mismatch", message).with_allowed(["pad_to_horizon"])
            }
            DfaError::MalformedAction(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "malformed_action", message),
            DfaError::DemoFailsTask(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "demo_fails_task", message).with_allowed(["allow_failing"])
            }
            DfaError::InvalidConfig(_) | DfaError::DomainMismatch { .. } | DfaError::Json(_) => Self::bad_request(message),
            _ => Self::internal(message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut res = (self.status, Json(self.body())).into_response();
        if self.status == StatusCode::ACCEPTED {
            res.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from(RETRY_AFTER_SECS));
        }
        res
    }
}
