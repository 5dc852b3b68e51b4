use axum::extract::{Path, State};
use axum::http::header::{ETAG, IF_MATCH};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use opencourier_core::delivery::{Actor, Bucket, CourierAvailability, Delivery, EventKind};
use opencourier_core::geo::LonLat;
use opencourier_core::ids::{DeliveryId, NoteId};
use opencourier_core::instance::CourierRecord;
use opencourier_core::notes::LocationNote;
use opencourier_core::ErrorCode;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ApiError, ApiResult};
use crate::extract::{CourierCtx, JsonBody, QueryArgs};
use crate::AppState;

pub async fn list_bucket(ctx: CourierCtx, bucket: Bucket) -> ApiResult<Json<Vec<Delivery>>> {
    Ok(Json(ctx.instance.courier_deliveries(&ctx.courier, bucket)?))
}

pub async fn lifecycle(state: &AppState, ctx: CourierCtx, id: String, kind: EventKind) -> ApiResult<Json<Delivery>> {
    let now = state.clock.now();
    Ok(Json(ctx.instance.courier_event(&ctx.courier, &DeliveryId::new(id), kind, now)?))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct IssueBody {
    pub code: String,
    #[serde(default)]
    pub note: String,
}

pub async fn report_issue(
    State(state): State<AppState>,
    ctx: CourierCtx,
    Path(id): Path<String>,
    JsonBody(body): JsonBody<IssueBody>,
) -> ApiResult<Json<Delivery>> {
    let d = ctx.instance.report_issue(
        Actor::Courier(ctx.courier.clone()),
        &DeliveryId::new(id),
        &body.code,
        &body.note,
        state.clock.now(),
    )?;
    Ok(Json(d))
}

fn etag(version: u64) -> HeaderValue {
    HeaderValue::from_str(&format!("\"{version}\"")).expect("ascii")
}

fn parse_if_match(headers: &HeaderMap) -> Result<Option<u64>, ApiError> {
    let Some(v) = headers.get(IF_MATCH) else {
        return Ok(None);
    };
    let s = v.to_str().unwrap_or_default().trim();
    if s == "*" {
        return Ok(None);
    }
    let s = s.strip_prefix("W/").unwrap_or(s).trim_matches('"');
    s.parse()
        .map(Some)
        .map_err(|_| ApiError::new(ErrorCode::ValidationError, format!("If-Match '{s}' is not a version tag")))
}

pub async fn get_settings(ctx: CourierCtx) -> ApiResult<Response> {
    let v = ctx.instance.preferences(&ctx.courier)?;
    Ok(([(ETAG, etag(v.version))], Json(v.value)).into_response())
}

pub async fn patch_settings(ctx: CourierCtx, headers: HeaderMap, JsonBody(patch): JsonBody<Value>) -> ApiResult<Response> {
    let Value::Object(patch) = patch else {
        return Err(ApiError::new(ErrorCode::ValidationError, "settings patch must be a JSON object"));
    };
    let if_match = parse_if_match(&headers)?;
    let v = ctx
        .instance
        .patch_preferences(&ctx.courier, &patch, if_match)
        .map_err(|e| match e.code {
            ErrorCode::VersionConflict => ApiError::from(e).with_status(StatusCode::PRECONDITION_FAILED),
            _ => e.into(),
        })?;
    Ok(([(ETAG, etag(v.version))], Json(v.value)).into_response())
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct StatusBody {
    pub availability: CourierAvailability,
}

pub async fn put_status(
    State(state): State<AppState>,
    ctx: CourierCtx,
    JsonBody(body): JsonBody<StatusBody>,
) -> ApiResult<Json<CourierRecord>> {
    let rec = ctx.instance.set_availability(&ctx.courier, body.availability)?;
    ctx.instance.dispatch_pending(state.clock.now())?;
    Ok(Json(rec))
}

pub async fn put_location(
    State(state): State<AppState>,
    ctx: CourierCtx,
    JsonBody(p): JsonBody<LonLat>,
) -> ApiResult<Json<CourierRecord>> {
    let now = state.clock.now();
    let rec = ctx.instance.set_position(&ctx.courier, p, now)?;
    ctx.instance.dispatch_pending(now)?;
    Ok(Json(rec))
}

// ---- location notes ----

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NewNote {
    pub position: LonLat,
    pub text: String,
}

pub async fn create_note(
    State(state): State<AppState>,
    ctx: CourierCtx,
    JsonBody(body): JsonBody<NewNote>,
) -> ApiResult<(StatusCode, Json<LocationNote>)> {
    let n = ctx.instance.create_note(&ctx.courier, body.position, body.text, state.clock.now())?;
    Ok((StatusCode::CREATED, Json(n)))
}

pub async fn my_notes(ctx: CourierCtx) -> ApiResult<Json<Vec<LocationNote>>> {
    Ok(Json(ctx.instance.notes_by(&ctx.courier)?))
}

#[derive(Deserialize)]
pub struct NearQuery {
    pub lon: f64,
    pub lat: f64,
    pub radius: f64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
pub struct NoteWithDistance {
    #[serde(flatten)]
    pub note: LocationNote,
    pub distance_meters: f64,
}

pub async fn notes_near(ctx: CourierCtx, QueryArgs(q): QueryArgs<NearQuery>) -> ApiResult<Json<Vec<NoteWithDistance>>> {
    let found = ctx.instance.notes_near(LonLat::new(q.lon, q.lat), q.radius)?;
    Ok(Json(
        found
            .into_iter()
            .map(|(note, d)| NoteWithDistance { note, distance_meters: d })
            .collect(),
    ))
}

pub async fn get_note(ctx: CourierCtx, Path(id): Path<String>) -> ApiResult<Json<LocationNote>> {
    Ok(Json(ctx.instance.note(&NoteId::new(id))?))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EditNote {
    pub text: String,
}

pub async fn edit_note(
    State(state): State<AppState>,
    ctx: CourierCtx,
    Path(id): Path<String>,
    JsonBody(body): JsonBody<EditNote>,
) -> ApiResult<Json<LocationNote>> {
    let n = ctx
        .instance
        .edit_note(&ctx.courier, &NoteId::new(id), body.text, state.clock.now())?;
    Ok(Json(n))
}

pub async fn delete_note(State(state): State<AppState>, ctx: CourierCtx, Path(id): Path<String>) -> ApiResult<StatusCode> {
    ctx.instance
        .delete_note(&ctx.courier, &NoteId::new(id), state.clock.now())?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Reaction {
    pub emoji: String,
}

pub async fn react(ctx: CourierCtx, Path(id): Path<String>, JsonBody(body): JsonBody<Reaction>) -> ApiResult<Json<LocationNote>> {
    Ok(Json(ctx.instance.react_to_note(&ctx.courier, &NoteId::new(id), &body.emoji)?))
}

