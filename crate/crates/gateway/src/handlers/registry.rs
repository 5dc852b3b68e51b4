use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::Json;
use opencourier_core::registry::{InstanceFilter, InstanceRecord};
use opencourier_core::{Error, ErrorCode};
use serde::Deserialize;

use crate::error::{ApiError, ApiResult};
use crate::extract::{AnyAdmin, JsonBody, QueryArgs};
use crate::AppState;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterArgs {
    pub lon: Option<f64>,
    pub lat: Option<f64>,
    pub language: Option<String>,
    pub q: Option<String>,
}

pub async fn query(State(state): State<AppState>, QueryArgs(args): QueryArgs<FilterArgs>) -> ApiResult<Json<Vec<InstanceRecord>>> {
    let filter: InstanceFilter = args.try_into()?;
    Ok(Json(state.fed.registry.snapshot().query_instances(&filter)?))
}

pub async fn get_one(State(state): State<AppState>, Path(domain): Path<String>) -> ApiResult<Json<InstanceRecord>> {
    state
        .fed
        .registry
        .snapshot()
        .find(&domain)
        .filter(|r| !r.tombstone)
        .cloned()
        .map(Json)
        .ok_or_else(|| Error::not_found("instance", &domain).into())
}

pub async fn register(
    State(state): State<AppState>,
    _admin: AnyAdmin,
    JsonBody(rec): JsonBody<InstanceRecord>,
) -> ApiResult<(StatusCode, Json<InstanceRecord>)> {
    state.fed.registry.register(rec.clone())?;
    Ok((StatusCode::CREATED, Json(rec)))
}

pub async fn replace(
    State(state): State<AppState>,
    _admin: AnyAdmin,
    Path(domain): Path<String>,
    JsonBody(rec): JsonBody<InstanceRecord>,
) -> ApiResult<Json<InstanceRecord>> {
    if rec.domain_name != domain {
        return Err(ApiError::new(ErrorCode::ValidationError, "domainName must match the path"));
    }
    state.fed.registry.replace(rec.clone())?;
    Ok(Json(rec))
}
