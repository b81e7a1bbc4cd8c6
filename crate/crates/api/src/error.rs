use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use bankflow_core::EngineError;
use serde::{Deserialize, Serialize};

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn unauthorized() -> Self {
        ApiError::new(
            StatusCode::UNAUTHORIZED,
            "Unauthorized",
            "missing or unknown bearer token",
        )
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::FORBIDDEN, "Forbidden", message)
    }

    pub fn bad_body(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "InvalidRequest", message)
    }
}

/// HTTP status for an engine error code.
pub fn status_for(code: &str) -> StatusCode {
    match code {
        "InvalidRequest" | "InvalidTopic" | "InvalidChannel" | "InvalidEvent" | "UnknownKind" => {
            StatusCode::BAD_REQUEST
        }
        "UnknownRequest" | "UnknownSubscription" | "UnknownTier" | "UnknownDelivery" => {
            StatusCode::NOT_FOUND
        }
        "NotCurrentTier" | "TerminalState" | "AuthorityExceeded" | "NoNextTier"
        | "ChainMismatch" | "Conflict" => StatusCode::CONFLICT,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<EngineError> for ApiError {
    fn from(err: EngineError) -> Self {
        ApiError::new(status_for(err.code()), err.code(), err.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = %self.code, "{}", self.message);
        }
        let body = ErrorBody {
            code: self.code,
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}
