use std::path::PathBuf;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use speciescope::dataset::DatasetError;
use speciescope::features::FeatureError;
use speciescope::model::ModelError;
use thiserror::Error;

/// Startup and configuration failures.
#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("SPECIESCOPE_DATA is not set")]
    NoDataRoot,
    #[error("invalid SPECIESCOPE_PORT `{0}`")]
    BadPort(String),
    #[error("dataset missing: {0} not found")]
    DatasetMissing(PathBuf),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error("model {path}: {source}")]
    Model { path: PathBuf, source: ModelError },
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
}

/// A failed request: status plus a message rendered as `{"error": ...}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<DatasetError> for ApiError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::UnknownSpecimen(_) => Self::not_found(e.to_string()),
            DatasetError::ScoreOutOfRange(_) | DatasetError::InvalidSplit(_) | DatasetError::InvalidGenotype(_) => Self::bad_request(e.to_string()),
            other => Self::internal(other.to_string()),
        }
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;
