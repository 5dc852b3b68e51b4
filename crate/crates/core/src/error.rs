use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Machine-readable error codes shared by every module and surfaced verbatim
/// in the HTTP error envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    ParseError,
    ValidationError,
    SourceUnavailable,
    DuplicateDomain,
    ReadOnlyRegistry,
    InvalidGeometry,
    IllegalTransition,
    ForbiddenActor,
    NotFound,
    Unauthenticated,
    Unauthorized,
    IssueWindowClosed,
    UnknownInstance,
    ThreadClosed,
    Expired,
    OutOfTurn,
    RoundLimit,
    NoMatchingInstance,
    NotAccepted,
    AlreadyFinalized,
    NoCandidate,
    IllegalState,
    EmptyRange,
    VersionConflict,
    CorruptRecord,
    ScenarioInvalid,
    IdempotencyConflict,
    Internal,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::ParseError => "PARSE_ERROR",
            ErrorCode::ValidationError => "VALIDATION_ERROR",
            ErrorCode::SourceUnavailable => "SOURCE_UNAVAILABLE",
            ErrorCode::DuplicateDomain => "DUPLICATE_DOMAIN",
            ErrorCode::ReadOnlyRegistry => "READ_ONLY_REGISTRY",
            ErrorCode::InvalidGeometry => "INVALID_GEOMETRY",
            ErrorCode::IllegalTransition => "ILLEGAL_TRANSITION",
            ErrorCode::ForbiddenActor => "FORBIDDEN_ACTOR",
            ErrorCode::NotFound => "NOT_FOUND",
            ErrorCode::Unauthenticated => "UNAUTHENTICATED",
            ErrorCode::Unauthorized => "UNAUTHORIZED",
            ErrorCode::IssueWindowClosed => "ISSUE_WINDOW_CLOSED",
            ErrorCode::UnknownInstance => "UNKNOWN_INSTANCE",
            ErrorCode::ThreadClosed => "THREAD_CLOSED",
            ErrorCode::Expired => "EXPIRED",
            ErrorCode::OutOfTurn => "OUT_OF_TURN",
            ErrorCode::RoundLimit => "ROUND_LIMIT",
            ErrorCode::NoMatchingInstance => "NO_MATCHING_INSTANCE",
            ErrorCode::NotAccepted => "NOT_ACCEPTED",
            ErrorCode::AlreadyFinalized => "ALREADY_FINALIZED",
            ErrorCode::NoCandidate => "NO_CANDIDATE",
            ErrorCode::IllegalState => "ILLEGAL_STATE",
            ErrorCode::EmptyRange => "EMPTY_RANGE",
            ErrorCode::VersionConflict => "VERSION_CONFLICT",
            ErrorCode::CorruptRecord => "CORRUPT_RECORD",
            ErrorCode::ScenarioInvalid => "SCENARIO_INVALID",
            ErrorCode::IdempotencyConflict => "IDEMPOTENCY_CONFLICT",
            ErrorCode::Internal => "INTERNAL",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Error carried across the domain layer: a code, a human message and
/// optional structured details (offending field, current state, ...).
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct Error {
    pub code: ErrorCode,
    pub message: String,
    pub details: Value,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::ValidationError, message)
    }

    /// Validation failure naming the offending field.
    pub fn field(field: &str, message: impl Into<String>) -> Self {
        let message = message.into();
        Self::new(ErrorCode::ValidationError, format!("{field}: {message}"))
            .with_details(serde_json::json!({ "field": field, "reason": message }))
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(ErrorCode::NotFound, format!("{what} {id} not found"))
            .with_details(serde_json::json!({ "resource": what, "id": id }))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }
}

/// Collects per-field validation problems so a caller gets every failure in
/// one response instead of the first one only.
#[derive(Debug, Default)]
pub struct FieldErrors {
    errors: Vec<(String, String)>,
}

impl FieldErrors {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, field: impl Into<String>, reason: impl Into<String>) {
        self.errors.push((field.into(), reason.into()));
    }

    pub fn check(&mut self, ok: bool, field: &str, reason: &str) {
        if !ok {
            self.push(field, reason);
        }
    }

    /// Records an error from a nested validation routine under `field`.
    pub fn absorb(&mut self, field: &str, result: Result<()>) {
        if let Err(e) = result {
            self.push(field, e.message);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn into_result(self, context: &str) -> Result<()> {
        if self.errors.is_empty() {
            return Ok(());
        }
        let summary = self
            .errors
            .iter()
            .map(|(f, r)| format!("{f}: {r}"))
            .collect::<Vec<_>>()
            .join("; ");
        let fields: Vec<Value> = self
            .errors
            .iter()
            .map(|(f, r)| serde_json::json!({ "field": f, "reason": r }))
            .collect();
        Err(Error::validation(format!("{context}: {summary}"))
            .with_details(serde_json::json!({ "fields": fields })))
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::new(ErrorCode::ParseError, e.to_string())
    }
}
