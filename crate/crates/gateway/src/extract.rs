//! Request extractors that fail with the standard error envelope.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, FromRequestParts, Request};
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use opencourier_core::ids::{CourierId, RequesterId, Role};
use opencourier_core::instance::Instance;
use opencourier_core::{Error, ErrorCode};
use serde::de::DeserializeOwned;

use crate::auth::Principal;
use crate::error::ApiError;
use crate::AppState;

pub struct Authed(pub Principal);

impl FromRequestParts<AppState> for Authed {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let header = parts
            .headers
            .get(AUTHORIZATION)
            .ok_or_else(|| ApiError::new(ErrorCode::Unauthenticated, "missing bearer token"))?;
        let token = header
            .to_str()
            .ok()
            .and_then(|h| h.strip_prefix("Bearer ").or_else(|| h.strip_prefix("bearer ")))
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| ApiError::new(ErrorCode::Unauthenticated, "malformed Authorization header"))?;
        Ok(Authed(state.tokens.authenticate(token)?))
    }
}

fn forbidden(p: &Principal, wanted: &str) -> ApiError {
    ApiError::new(
        ErrorCode::Unauthorized,
        format!("{:?} credentials cannot use {wanted} endpoints", p.role),
    )
}

fn instance_of(state: &AppState, p: &Principal) -> Result<Arc<Instance>, ApiError> {
    let domain = p
        .instance
        .as_deref()
        .ok_or_else(|| ApiError::new(ErrorCode::Unauthorized, "credential is not bound to an instance"))?;
    Ok(state.fed.instance(domain)?.clone())
}

pub struct CourierCtx {
    pub courier: CourierId,
    pub instance: Arc<Instance>,
}

impl FromRequestParts<AppState> for CourierCtx {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let Authed(p) = Authed::from_request_parts(parts, state).await?;
        if p.role != Role::Courier {
            return Err(forbidden(&p, "courier"));
        }
        Ok(Self {
            instance: instance_of(state, &p)?,
            courier: CourierId::new(p.id),
        })
    }
}

pub struct AdminCtx {
    pub id: String,
    pub instance: Arc<Instance>,
}

impl FromRequestParts<AppState> for AdminCtx {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let Authed(p) = Authed::from_request_parts(parts, state).await?;
        if p.role != Role::Admin {
            return Err(forbidden(&p, "admin"));
        }
        Ok(Self {
            instance: instance_of(state, &p)?,
            id: p.id,
        })
    }
}

/// Any admin credential, bound to an instance or not.
pub struct AnyAdmin(pub Principal);

impl FromRequestParts<AppState> for AnyAdmin {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let Authed(p) = Authed::from_request_parts(parts, state).await?;
        if p.role != Role::Admin {
            return Err(forbidden(&p, "admin"));
        }
        Ok(Self(p))
    }
}

/// Admin or auditor of an instance.
pub struct ExportCtx {
    pub role: Role,
    pub instance: Arc<Instance>,
}

impl FromRequestParts<AppState> for ExportCtx {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let Authed(p) = Authed::from_request_parts(parts, state).await?;
        if !matches!(p.role, Role::Admin | Role::Auditor) {
            return Err(forbidden(&p, "disclosure"));
        }
        Ok(Self {
            instance: instance_of(state, &p)?,
            role: p.role,
        })
    }
}

pub struct RequesterCtx {
    pub requester: RequesterId,
}

impl FromRequestParts<AppState> for RequesterCtx {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let Authed(p) = Authed::from_request_parts(parts, state).await?;
        if p.role != Role::Requester {
            return Err(forbidden(&p, "requester"));
        }
        Ok(Self {
            requester: RequesterId::new(p.id),
        })
    }
}

/// Syntax errors are PARSE_ERROR; well-formed JSON of the wrong shape is
/// VALIDATION_ERROR.
pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, Error> {
    serde_json::from_slice(bytes).map_err(|e| {
        let code = match e.classify() {
            serde_json::error::Category::Data => ErrorCode::ValidationError,
            _ => ErrorCode::ParseError,
        };
        Error::new(code, format!("request body: {e}"))
    })
}

pub struct JsonBody<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::new(ErrorCode::ValidationError, e.body_text()))?;
        Ok(Self(decode(&bytes)?))
    }
}

/// A body that may be empty.
pub struct OptionalJson<T>(pub Option<T>);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for OptionalJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::new(ErrorCode::ValidationError, e.body_text()))?;
        if bytes.iter().all(u8::is_ascii_whitespace) {
            return Ok(Self(None));
        }
        Ok(Self(Some(decode(&bytes)?)))
    }
}

pub struct QueryArgs<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequestParts<S> for QueryArgs<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        axum::extract::Query::<T>::from_request_parts(parts, state)
            .await
            .map(|q| Self(q.0))
            .map_err(|e| ApiError::new(ErrorCode::ValidationError, e.body_text()))
    }
}
