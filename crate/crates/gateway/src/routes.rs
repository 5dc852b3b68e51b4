//! The route table and router assembly.

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::middleware;
use axum::response::Response;
use axum::routing::{get, patch, post, put, MethodRouter};
use axum::Router;
use opencourier_core::delivery::{Bucket, EventKind};
use serde_json::json;

use crate::error::error_response;
use crate::extract::CourierCtx;
use crate::handlers::{admin, courier, quotes, registry};
use crate::{idempotency, AppState};

/// Every route served by the instance gateway, as `(METHOD, path)`.
pub const ROUTES: &[(&str, &str)] = &[
    ("GET", "/api/admin/v1/deliveries/{deliveryId}"),
    ("GET", "/api/courier/v1/deliveries/new"),
    ("GET", "/api/courier/v1/deliveries/in-progress"),
    ("GET", "/api/courier/v1/deliveries/done"),
    ("POST", "/api/courier/v1/deliveries/{deliveryId}/accept"),
    ("POST", "/api/courier/v1/deliveries/{deliveryId}/reject"),
    ("PATCH", "/api/courier/v1/deliveries/{deliveryId}/cancel"),
    ("POST", "/api/courier/v1/deliveries/{deliveryId}/mark-as-dispatched"),
    ("POST", "/api/courier/v1/deliveries/{deliveryId}/arrived-at-pickup"),
    ("POST", "/api/courier/v1/deliveries/{deliveryId}/mark-as-picked-up"),
    ("POST", "/api/courier/v1/deliveries/{deliveryId}/mark-as-on-the-way"),
    ("POST", "/api/courier/v1/deliveries/{deliveryId}/arrived-at-dropoff"),
    ("POST", "/api/courier/v1/deliveries/{deliveryId}/mark-as-delivered"),
    ("PATCH", "/api/courier/v1/deliveries/{deliveryId}/report-issue"),
    ("POST", "/api/courier/v1/location-notes"),
    ("GET", "/api/courier/v1/location-notes"),
    ("PATCH", "/api/courier/v1/location-notes/{locationNoteId}"),
    ("GET", "/api/courier/v1/location-notes/{locationNoteId}"),
    ("DELETE", "/api/courier/v1/location-notes/{locationNoteId}"),
    ("POST", "/api/courier/v1/location-notes/{locationNoteId}/react"),
    ("GET", "/api/courier/v1/location-notes/near"),
    ("GET", "/api/courier/v1/settings"),
    ("PATCH", "/api/courier/v1/settings"),
    ("PUT", "/api/courier/v1/status"),
    ("PUT", "/api/courier/v1/location"),
    ("GET", "/api/admin/v1/deliveries"),
    ("PATCH", "/api/admin/v1/deliveries/{deliveryId}/cancel"),
    ("POST", "/api/admin/v1/dispatch-pending"),
    ("GET", "/api/admin/v1/tasks/{taskId}"),
    ("POST", "/api/admin/v1/couriers"),
    ("GET", "/api/admin/v1/couriers"),
    ("POST", "/api/admin/v1/couriers/{courierId}/revoke-token"),
    ("POST", "/api/admin/v1/requesters"),
    ("POST", "/api/admin/v1/auditors"),
    ("GET", "/api/admin/v1/assignment-policy"),
    ("PUT", "/api/admin/v1/assignment-policy"),
    ("GET", "/api/admin/v1/assignment-policy/history"),
    ("GET", "/api/admin/v1/disclosure/export.csv"),
    ("GET", "/api/admin/v1/disclosure/metrics"),
    ("POST", "/api/requester/v1/quotes"),
    ("GET", "/api/requester/v1/quotes"),
    ("POST", "/api/requester/v1/quotes/broadcast"),
    ("GET", "/api/requester/v1/quotes/{threadId}"),
    ("POST", "/api/requester/v1/quotes/{threadId}/respond"),
    ("POST", "/api/requester/v1/quotes/{threadId}/finalize"),
    ("GET", "/api/instance/v1/quotes"),
    ("GET", "/api/instance/v1/quotes/{threadId}"),
    ("POST", "/api/instance/v1/quotes/{threadId}/respond"),
    ("GET", "/api/registry/v1/instances"),
    ("POST", "/api/registry/v1/instances"),
    ("GET", "/api/registry/v1/instances/{domainName}"),
    ("PUT", "/api/registry/v1/instances/{domainName}"),
];

/// Routes of the standalone registry service.
pub const REGISTRY_ROUTES: &[(&str, &str)] = &[
    ("GET", "/api/registry/v1/instances"),
    ("POST", "/api/registry/v1/instances"),
    ("GET", "/api/registry/v1/instances/{domainName}"),
    ("PUT", "/api/registry/v1/instances/{domainName}"),
];

fn lifecycle(kind: EventKind) -> MethodRouter<AppState> {
    let h = move |State(s): State<AppState>, ctx: CourierCtx, Path(id): Path<String>| async move {
        courier::lifecycle(&s, ctx, id, kind).await
    };
    if kind == EventKind::Cancel {
        patch(h)
    } else {
        post(h)
    }
}

fn bucket(b: Bucket) -> MethodRouter<AppState> {
    get(move |ctx: CourierCtx| courier::list_bucket(ctx, b))
}

async fn not_found() -> Response {
    error_response(StatusCode::NOT_FOUND, "NOT_FOUND", "no such route", json!({}))
}

async fn method_not_allowed() -> Response {
    error_response(
        StatusCode::METHOD_NOT_ALLOWED,
        "METHOD_NOT_ALLOWED",
        "method not allowed on this route",
        json!({}),
    )
}

fn registry_routes() -> Router<AppState> {
    Router::new()
        .route("/api/registry/v1/instances", get(registry::query).post(registry::register))
        .route(
            "/api/registry/v1/instances/{domainName}",
            get(registry::get_one).put(registry::replace),
        )
}

fn finish(r: Router<AppState>, state: AppState) -> Router {
    r.fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(middleware::from_fn_with_state(state.clone(), idempotency::middleware))
        .with_state(state)
}

pub fn router(state: AppState) -> Router {
    let mut r = Router::new()
        .route("/api/courier/v1/deliveries/new", bucket(Bucket::New))
        .route("/api/courier/v1/deliveries/in-progress", bucket(Bucket::InProgress))
        .route("/api/courier/v1/deliveries/done", bucket(Bucket::Done))
        .route(
            "/api/courier/v1/deliveries/{deliveryId}/report-issue",
            patch(courier::report_issue),
        );
    for kind in EventKind::ALL {
        if kind == EventKind::ReportIssue {
            continue;
        }
        r = r.route(
            &format!("/api/courier/v1/deliveries/{{deliveryId}}/{}", kind.endpoint_action()),
            lifecycle(kind),
        );
    }
    let r = r
        .route(
            "/api/courier/v1/location-notes",
            post(courier::create_note).get(courier::my_notes),
        )
        .route("/api/courier/v1/location-notes/near", get(courier::notes_near))
        .route(
            "/api/courier/v1/location-notes/{locationNoteId}",
            patch(courier::edit_note).get(courier::get_note).delete(courier::delete_note),
        )
        .route("/api/courier/v1/location-notes/{locationNoteId}/react", post(courier::react))
        .route(
            "/api/courier/v1/settings",
            get(courier::get_settings).patch(courier::patch_settings),
        )
        .route("/api/courier/v1/status", put(courier::put_status))
        .route("/api/courier/v1/location", put(courier::put_location))
        .route("/api/admin/v1/deliveries", get(admin::list_deliveries))
        .route("/api/admin/v1/deliveries/{deliveryId}", get(admin::get_delivery))
        .route("/api/admin/v1/deliveries/{deliveryId}/cancel", patch(admin::cancel_delivery))
        .route("/api/admin/v1/dispatch-pending", post(admin::dispatch_pending))
        .route("/api/admin/v1/tasks/{taskId}", get(admin::get_task))
        .route(
            "/api/admin/v1/couriers",
            post(admin::create_courier).get(admin::list_couriers),
        )
        .route("/api/admin/v1/couriers/{courierId}/revoke-token", post(admin::revoke_courier))
        .route("/api/admin/v1/requesters", post(admin::create_requester))
        .route("/api/admin/v1/auditors", post(admin::create_auditor))
        .route(
            "/api/admin/v1/assignment-policy",
            get(admin::get_policy).put(admin::put_policy),
        )
        .route("/api/admin/v1/assignment-policy/history", get(admin::policy_history))
        .route("/api/admin/v1/disclosure/export.csv", get(admin::export_csv))
        .route("/api/admin/v1/disclosure/metrics", get(admin::metrics))
        .route(
            "/api/requester/v1/quotes",
            post(quotes::create).get(quotes::requester_threads),
        )
        .route("/api/requester/v1/quotes/broadcast", post(quotes::broadcast))
        .route("/api/requester/v1/quotes/{threadId}", get(quotes::requester_thread))
        .route("/api/requester/v1/quotes/{threadId}/respond", post(quotes::requester_respond))
        .route("/api/requester/v1/quotes/{threadId}/finalize", post(quotes::finalize))
        .route("/api/instance/v1/quotes", get(quotes::instance_threads))
        .route("/api/instance/v1/quotes/{threadId}", get(quotes::instance_thread))
        .route("/api/instance/v1/quotes/{threadId}/respond", post(quotes::instance_respond))
        .merge(registry_routes());
    finish(r, state)
}

/// Router for `registry serve`: the registry routes alone.
pub fn registry_router(state: AppState) -> Router {
    finish(registry_routes(), state)
}

/// The route table as printed by `routes`.
pub fn render(routes: &[(&str, &str)]) -> String {
    routes.iter().map(|(m, p)| format!("{m:<6} {p}\n")).collect()
}

