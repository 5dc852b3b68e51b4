use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::Json;
use opencourier_core::delivery::Delivery;
use opencourier_core::geo::LonLat;
use opencourier_core::ids::{GroupId, ThreadId};
use opencourier_core::quoting::{DeliveryQuote, NegotiationThread, Party, Response};
use opencourier_core::registry::InstanceFilter;
use opencourier_core::{Error, ErrorCode};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};
use crate::extract::{AdminCtx, JsonBody, RequesterCtx};
use crate::handlers::registry::FilterArgs;
use crate::AppState;

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CreateQuote {
    pub instance_domain: String,
    pub quote: DeliveryQuote,
}

pub async fn create(
    State(state): State<AppState>,
    ctx: RequesterCtx,
    JsonBody(body): JsonBody<CreateQuote>,
) -> ApiResult<(StatusCode, Json<NegotiationThread>)> {
    let reg = state.fed.registry.snapshot();
    let t = state
        .fed
        .desk
        .create_quote(&ctx.requester, &body.instance_domain, &body.quote, &reg, state.clock.now())?;
    Ok((StatusCode::CREATED, Json(t)))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Broadcast {
    #[serde(default)]
    pub filter: FilterArgs,
    pub quote: DeliveryQuote,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BroadcastResult {
    pub broadcast_group_id: Option<GroupId>,
    pub threads: Vec<NegotiationThread>,
}

pub async fn broadcast(
    State(state): State<AppState>,
    ctx: RequesterCtx,
    JsonBody(body): JsonBody<Broadcast>,
) -> ApiResult<(StatusCode, Json<BroadcastResult>)> {
    let filter: InstanceFilter = body.filter.try_into()?;
    let reg = state.fed.registry.snapshot();
    let threads = state
        .fed
        .desk
        .broadcast_quote(&ctx.requester, &reg, &filter, &body.quote, state.clock.now())?;
    Ok((
        StatusCode::CREATED,
        Json(BroadcastResult {
            broadcast_group_id: threads.first().and_then(|t| t.broadcast_group_id.clone()),
            threads,
        }),
    ))
}

fn owned_by_requester(state: &AppState, ctx: &RequesterCtx, id: &ThreadId) -> Result<NegotiationThread, ApiError> {
    let t = state.fed.desk.get(id)?;
    if t.requester_id != ctx.requester {
        // Do not reveal other requesters' threads.
        return Err(Error::not_found("thread", id.as_str()).into());
    }
    Ok(t)
}

fn owned_by_instance(state: &AppState, ctx: &AdminCtx, id: &ThreadId) -> Result<NegotiationThread, ApiError> {
    let t = state.fed.desk.get(id)?;
    if t.instance_domain != ctx.instance.domain() {
        return Err(Error::not_found("thread", id.as_str()).into());
    }
    Ok(t)
}

pub async fn requester_threads(State(state): State<AppState>, ctx: RequesterCtx) -> ApiResult<Json<Vec<NegotiationThread>>> {
    Ok(Json(state.fed.desk.threads(|t| t.requester_id == ctx.requester)?))
}

pub async fn requester_thread(
    State(state): State<AppState>,
    ctx: RequesterCtx,
    Path(id): Path<String>,
) -> ApiResult<Json<NegotiationThread>> {
    Ok(Json(owned_by_requester(&state, &ctx, &ThreadId::new(id))?))
}

pub async fn requester_respond(
    State(state): State<AppState>,
    ctx: RequesterCtx,
    Path(id): Path<String>,
    JsonBody(r): JsonBody<Response>,
) -> ApiResult<Json<NegotiationThread>> {
    let id = ThreadId::new(id);
    owned_by_requester(&state, &ctx, &id)?;
    Ok(Json(state.fed.desk.respond(&id, Party::Requester, &r, state.clock.now())?))
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Finalized {
    pub thread: NegotiationThread,
    pub delivery: Delivery,
}

pub async fn finalize(State(state): State<AppState>, ctx: RequesterCtx, Path(id): Path<String>) -> ApiResult<Json<Finalized>> {
    let id = ThreadId::new(id);
    owned_by_requester(&state, &ctx, &id)?;
    let (thread, delivery) = state.fed.finalize(&id, state.clock.now())?;
    Ok(Json(Finalized { thread, delivery }))
}

pub async fn instance_threads(State(state): State<AppState>, ctx: AdminCtx) -> ApiResult<Json<Vec<NegotiationThread>>> {
    let domain = ctx.instance.domain().to_owned();
    Ok(Json(state.fed.desk.threads(|t| t.instance_domain == domain)?))
}

pub async fn instance_thread(State(state): State<AppState>, ctx: AdminCtx, Path(id): Path<String>) -> ApiResult<Json<NegotiationThread>> {
    Ok(Json(owned_by_instance(&state, &ctx, &ThreadId::new(id))?))
}

pub async fn instance_respond(
    State(state): State<AppState>,
    ctx: AdminCtx,
    Path(id): Path<String>,
    JsonBody(r): JsonBody<Response>,
) -> ApiResult<Json<NegotiationThread>> {
    let id = ThreadId::new(id);
    owned_by_instance(&state, &ctx, &id)?;
    Ok(Json(state.fed.desk.respond(&id, Party::Instance, &r, state.clock.now())?))
}

impl TryFrom<FilterArgs> for InstanceFilter {
    type Error = ApiError;

    fn try_from(a: FilterArgs) -> Result<Self, ApiError> {
        let point = match (a.lon, a.lat) {
            (Some(lon), Some(lat)) => {
                let p = LonLat::new(lon, lat);
                p.validate()?;
                Some(p)
            }
            (None, None) => None,
            _ => return Err(ApiError::new(ErrorCode::ValidationError, "lon and lat go together")),
        };
        Ok(InstanceFilter {
            point,
            region: None,
            language: a.language.filter(|s| !s.is_empty()),
            text: a.q.filter(|s| !s.is_empty()),
        })
    }
}
