use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use opencourier_core::{Error, ErrorCode};
use serde_json::{json, Value};

/// A domain error on its way out as an HTTP response.
#[derive(Debug)]
pub struct ApiError {
    pub error: Error,
    pub status: Option<StatusCode>,
}

pub type ApiResult<T> = Result<T, ApiError>;

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Error::new(code, message).into()
    }

    pub fn with_status(mut self, status: StatusCode) -> Self {
        self.status = Some(status);
        self
    }
}

impl From<Error> for ApiError {
    fn from(error: Error) -> Self {
        Self { error, status: None }
    }
}

pub fn status_for(code: ErrorCode) -> StatusCode {
    use ErrorCode::*;
    match code {
        ParseError | ValidationError | InvalidGeometry | EmptyRange | ScenarioInvalid => StatusCode::BAD_REQUEST,
        Unauthenticated => StatusCode::UNAUTHORIZED,
        Unauthorized | ForbiddenActor => StatusCode::FORBIDDEN,
        NotFound | UnknownInstance | NoMatchingInstance => StatusCode::NOT_FOUND,
        IllegalTransition | ThreadClosed | DuplicateDomain | ReadOnlyRegistry | IssueWindowClosed | Expired
        | OutOfTurn | NotAccepted | AlreadyFinalized | NoCandidate | IllegalState | VersionConflict => {
            StatusCode::CONFLICT
        }
        RoundLimit | IdempotencyConflict => StatusCode::UNPROCESSABLE_ENTITY,
        SourceUnavailable => StatusCode::SERVICE_UNAVAILABLE,
        CorruptRecord | Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

pub fn envelope(code: &str, message: &str, details: Value) -> Value {
    let details = if details.is_null() { json!({}) } else { details };
    json!({ "error": { "code": code, "message": message, "details": details } })
}

pub fn error_response(status: StatusCode, code: &str, message: &str, details: Value) -> Response {
    (status, Json(envelope(code, message, details))).into_response()
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status.unwrap_or_else(|| status_for(self.error.code));
        if status.is_server_error() {
            tracing::error!(code = %self.error.code, "{}", self.error.message);
        }
        error_response(status, self.error.code.as_str(), &self.error.message, self.error.details)
    }
}
