use axum::extract::{Path, State};
use axum::http::header::CONTENT_TYPE;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use chrono::{DateTime, Utc};
use opencourier_core::assignment::AssignmentPolicy;
use opencourier_core::delivery::{Actor, Delivery, DeliveryStatus, EventKind, TransitionEvent};
use opencourier_core::disclosure::{Metrics, Salt, TimeRange};
use opencourier_core::ids::{CourierId, DeliveryId, Role, TaskId};
use opencourier_core::instance::{CourierRecord, PolicyChange, TaskRecord};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::auth::Principal;
use crate::error::ApiResult;
use crate::extract::{AdminCtx, AnyAdmin, ExportCtx, JsonBody, OptionalJson, QueryArgs};
use crate::AppState;

pub async fn get_delivery(ctx: AdminCtx, Path(id): Path<String>) -> ApiResult<Json<Delivery>> {
    Ok(Json(ctx.instance.delivery(&DeliveryId::new(id))?))
}

#[derive(Deserialize)]
pub struct ListQuery {
    pub status: Option<DeliveryStatus>,
}

pub async fn list_deliveries(ctx: AdminCtx, QueryArgs(q): QueryArgs<ListQuery>) -> ApiResult<Json<Vec<Delivery>>> {
    let mut all: Vec<Delivery> = ctx
        .instance
        .deliveries()?
        .into_iter()
        .filter(|d| q.status.is_none_or(|s| d.status == s))
        .collect();
    all.sort_by(|a, b| b.updated_at.cmp(&a.updated_at).then_with(|| a.delivery_id.cmp(&b.delivery_id)));
    Ok(Json(all))
}

#[derive(Deserialize, Default)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CancelBody {
    #[serde(default)]
    pub reason: String,
}

pub async fn cancel_delivery(
    State(state): State<AppState>,
    ctx: AdminCtx,
    Path(id): Path<String>,
    OptionalJson(body): OptionalJson<CancelBody>,
) -> ApiResult<Json<Delivery>> {
    let reason = body.unwrap_or_default().reason;
    let ev = TransitionEvent::new(EventKind::Cancel, Actor::Admin).with_detail(json!({ "reason": reason }));
    Ok(Json(ctx.instance.apply_event(&DeliveryId::new(id), &ev, state.clock.now())?))
}

pub async fn dispatch_pending(State(state): State<AppState>, ctx: AdminCtx) -> ApiResult<Json<Value>> {
    let done = ctx.instance.dispatch_pending(state.clock.now())?;
    let rows: Vec<Value> = done
        .into_iter()
        .map(|(d, c)| json!({ "deliveryId": d, "courierId": c }))
        .collect();
    Ok(Json(json!({ "dispatched": rows })))
}

pub async fn get_task(ctx: AdminCtx, Path(id): Path<String>) -> ApiResult<Json<TaskRecord>> {
    Ok(Json(ctx.instance.task(&TaskId::new(id))?))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NameBody {
    pub name: String,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EnrolledCourier {
    pub courier: CourierRecord,
    pub token: String,
}

pub async fn create_courier(
    State(state): State<AppState>,
    ctx: AdminCtx,
    JsonBody(body): JsonBody<NameBody>,
) -> ApiResult<(StatusCode, Json<EnrolledCourier>)> {
    let now = state.clock.now();
    let courier = ctx.instance.enroll_courier(&body.name, now)?;
    let token = state.tokens.issue(
        Principal::new(Role::Courier, courier.courier_id.as_str(), Some(ctx.instance.domain())),
        now,
    )?;
    Ok((StatusCode::CREATED, Json(EnrolledCourier { courier, token })))
}

pub async fn list_couriers(ctx: AdminCtx) -> ApiResult<Json<Vec<CourierRecord>>> {
    Ok(Json(ctx.instance.couriers()?))
}

pub async fn revoke_courier(State(state): State<AppState>, ctx: AdminCtx, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    ctx.instance.courier(&CourierId::new(id.clone()))?;
    let n = state.tokens.revoke(Role::Courier, &id)?;
    Ok(Json(json!({ "revoked": n })))
}

async fn issue(state: &AppState, role: Role, instance: Option<&str>, id_field: &str) -> ApiResult<(StatusCode, Json<Value>)> {
    let now = state.clock.now();
    let id = state.ids.next_id();
    let token = state.tokens.issue(Principal::new(role, id.clone(), instance), now)?;
    Ok((StatusCode::CREATED, Json(json!({ id_field: id, "token": token }))))
}

pub async fn create_requester(State(state): State<AppState>, _admin: AnyAdmin) -> ApiResult<(StatusCode, Json<Value>)> {
    issue(&state, Role::Requester, None, "requesterId").await
}

pub async fn create_auditor(State(state): State<AppState>, ctx: AdminCtx) -> ApiResult<(StatusCode, Json<Value>)> {
    issue(&state, Role::Auditor, Some(ctx.instance.domain()), "auditorId").await
}

pub async fn get_policy(ctx: AdminCtx) -> ApiResult<Json<AssignmentPolicy>> {
    Ok(Json(ctx.instance.policy()?))
}

pub async fn put_policy(
    State(state): State<AppState>,
    ctx: AdminCtx,
    JsonBody(p): JsonBody<AssignmentPolicy>,
) -> ApiResult<Json<AssignmentPolicy>> {
    Ok(Json(ctx.instance.set_policy(p, state.clock.now())?))
}

pub async fn policy_history(ctx: AdminCtx) -> ApiResult<Json<Vec<PolicyChange>>> {
    Ok(Json(ctx.instance.policy_log()?))
}

#[derive(Deserialize)]
pub struct RangeQuery {
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
    /// Pinned salt for longitudinal studies; random per export otherwise.
    pub salt: Option<String>,
}

pub async fn export_csv(ctx: ExportCtx, QueryArgs(q): QueryArgs<RangeQuery>) -> ApiResult<Response> {
    let range = TimeRange::new(q.from, q.to)?;
    let salt = q.salt.map(Salt::pinned).unwrap_or_else(Salt::random);
    let csv = ctx.instance.export_csv(range, ctx.role, &salt)?;
    Ok(([(CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

pub async fn metrics(ctx: ExportCtx, QueryArgs(q): QueryArgs<RangeQuery>) -> ApiResult<Json<Metrics>> {
    let range = TimeRange::new(q.from, q.to)?;
    Ok(Json(ctx.instance.metrics(range, ctx.role)?))
}
