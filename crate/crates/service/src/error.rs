use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use serde::Serialize;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, ServiceError>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("trial `{0}` not found")]
    NotFound(String),
    #[error(transparent)]
    Config(plateau_core::Error),
    #[error("{0}")]
    InvalidCohort(String),
    #[error("trial has stopped ({0})")]
    Stopped(String),
    #[error("{0}")]
    SeqConflict(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("event log `{path}` is corrupt: {message}")]
    CorruptLog { path: String, message: String },
    #[error("storage error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Engine(plateau_core::Error),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "trial_not_found",
            ServiceError::Config(_) => "invalid_config",
            ServiceError::InvalidCohort(_) => "invalid_cohort",
            ServiceError::Stopped(_) => "trial_stopped",
            ServiceError::SeqConflict(_) => "seq_conflict",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::CorruptLog { .. } => "corrupt_log",
            ServiceError::Io(_) => "storage_error",
            ServiceError::Engine(_) => "inference_error",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Config(_) | ServiceError::InvalidCohort(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServiceError::Stopped(_) | ServiceError::SeqConflict(_) => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::CorruptLog { .. } | ServiceError::Io(_) | ServiceError::Engine(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }

    /// Maps a core error raised while handling a request.
    pub(crate) fn from_core(e: plateau_core::Error) -> Self {
        match e {
            plateau_core::Error::Config { .. } => ServiceError::Config(e),
            plateau_core::Error::Domain(m) => ServiceError::InvalidCohort(m),
            plateau_core::Error::State(m) => ServiceError::Stopped(m),
            other => ServiceError::Engine(other),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
}

#[derive(Serialize)]
struct ErrorEnvelope<'a> {
    error: ErrorBody<'a>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let field = match &self {
            ServiceError::Config(plateau_core::Error::Config { field, .. }) => Some(field.as_str()),
            _ => None,
        };
        let body = ErrorEnvelope {
            error: ErrorBody {
                code: self.code(),
                message: self.to_string(),
                field,
            },
        };
        let json = serde_json::to_vec(&body).unwrap_or_default();
        (
            self.status(),
            [(axum::http::header::CONTENT_TYPE, "application/json")],
            json,
        )
            .into_response()
    }
}
