use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use mentor_core::metrics::MetricsError;
use mentor_core::orchestrator::OrchestratorError;
use mentor_core::store::StoreError;
use serde::Serialize;

/// Machine codes a client can branch on.
pub const ERROR_CODES: &[&str] = &[
    "invalid_condition",
    "invalid_request",
    "invalid_style",
    "invalid_format",
    "not_found",
    "wrong_phase",
    "not_an_image",
    "awaiting_artifact",
    "session_closed",
    "nothing_pending",
    "uncoded_sessions",
    "missing_condition",
    "upstream_llm_error",
    "internal_error",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retryable: Option<bool>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        debug_assert!(ERROR_CODES.contains(&code));
        ApiError {
            status,
            code,
            message: message.into(),
            retryable: None,
        }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(what: impl std::fmt::Display) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        let msg = e.to_string();
        match e {
            OrchestratorError::WrongPhase { .. } => ApiError::new(StatusCode::CONFLICT, "wrong_phase", msg),
            OrchestratorError::NotAnImage(_) => ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, "not_an_image", msg),
            OrchestratorError::SessionClosed => ApiError::new(StatusCode::CONFLICT, "session_closed", msg),
            OrchestratorError::AwaitingArtifact => ApiError::new(StatusCode::CONFLICT, "awaiting_artifact", msg),
            OrchestratorError::NothingPending => ApiError::new(StatusCode::CONFLICT, "nothing_pending", msg),
            OrchestratorError::Gateway(ref g) => ApiError {
                retryable: Some(g.retryable()),
                ..ApiError::new(StatusCode::BAD_GATEWAY, "upstream_llm_error", msg)
            },
            OrchestratorError::NoActiveQuestion
            | OrchestratorError::GoalsUnmet(_)
            | OrchestratorError::QuestionsUnresolved(_)
            | OrchestratorError::AgendaUnconfirmed => ApiError::new(StatusCode::CONFLICT, "wrong_phase", msg),
            OrchestratorError::Model(_) => ApiError::internal(msg),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(id) => ApiError::not_found(format!("session `{id}`")),
            StoreError::InvalidId(id) => ApiError::not_found(format!("session `{id}`")),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<MetricsError> for ApiError {
    fn from(e: MetricsError) -> Self {
        let msg = e.to_string();
        match e {
            MetricsError::UncodedSessions(_) => ApiError::new(StatusCode::CONFLICT, "uncoded_sessions", msg),
            MetricsError::MissingCondition(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "missing_condition", msg)
            }
        }
    }
}
