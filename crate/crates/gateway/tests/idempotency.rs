mod common;

use axum::body::Body;
use axum::http::StatusCode;
use common::{error_code, App, ADMIN};
use serde_json::{json, Value};

async fn keyed(app: &App, method: &str, path: &str, token: &str, key: &str, body: Option<Value>) -> common::Reply {
    let req = App::request(method, path, Some(token), body.as_ref())
        .header("idempotency-key", key)
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    app.send(req).await
}

#[tokio::test]
async fn replay_returns_the_original_response_once_applied() {
    let app = App::new();
    let (_, token) = app.online_courier(ADMIN, "Ana", (-74.667, 40.3515)).await;
    let body = json!({ "position": { "lon": -74.667, "lat": 40.3515 }, "text": "Loading dock at rear" });
    let first = keyed(&app, "POST", "/api/courier/v1/location-notes", &token, "k-1", Some(body.clone())).await;
    assert_eq!(first.status, StatusCode::CREATED);
    assert!(first.headers.get("idempotent-replay").is_none());
    let again = keyed(&app, "POST", "/api/courier/v1/location-notes", &token, "k-1", Some(body.clone())).await;
    assert_eq!(again.status, StatusCode::CREATED);
    assert_eq!(again.text, first.text);
    assert_eq!(again.headers["idempotent-replay"], "true");

    let r = app.call("GET", "/api/courier/v1/location-notes", Some(&token), None).await;
    assert_eq!(r.body.as_array().unwrap().len(), 1);

    let mut other = body.clone();
    other["text"] = json!("Front door");
    let r = keyed(&app, "POST", "/api/courier/v1/location-notes", &token, "k-1", Some(other)).await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::UNPROCESSABLE_ENTITY, "IDEMPOTENCY_CONFLICT"));

    // A fresh key applies again.
    let r = keyed(&app, "POST", "/api/courier/v1/location-notes", &token, "k-2", Some(body)).await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert_ne!(r.body["locationNoteId"], first.body["locationNoteId"]);
}

#[tokio::test]
async fn keys_are_scoped_per_principal_and_route() {
    let app = App::new();
    let (_, ana) = app.online_courier(ADMIN, "Ana", (-74.667, 40.3515)).await;
    let (_, ben) = app.online_courier(ADMIN, "Ben", (-74.657, 40.344)).await;
    let body = json!({ "position": { "lon": -74.667, "lat": 40.3515 }, "text": "Gate code 1234" });
    let a = keyed(&app, "POST", "/api/courier/v1/location-notes", &ana, "same", Some(body.clone())).await;
    let b = keyed(&app, "POST", "/api/courier/v1/location-notes", &ben, "same", Some(body)).await;
    assert_eq!((a.status, b.status), (StatusCode::CREATED, StatusCode::CREATED));
    assert_ne!(a.body["locationNoteId"], b.body["locationNoteId"]);
}

#[tokio::test]
async fn lifecycle_retry_does_not_double_apply() {
    let app = App::new();
    let (_, courier) = app.online_courier(ADMIN, "Ana", (-74.667, 40.3515)).await;
    let requester = app.requester().await;
    let d = app.finalized_delivery(&requester, ADMIN, common::DOMAIN).await;
    let path = format!("/api/courier/v1/deliveries/{}/accept", d["deliveryId"].as_str().unwrap());
    let first = keyed(&app, "POST", &path, &courier, "accept-1", None).await;
    assert_eq!(first.status, StatusCode::OK);
    let retry = keyed(&app, "POST", &path, &courier, "accept-1", None).await;
    assert_eq!(retry.status, StatusCode::OK);
    assert_eq!(retry.text, first.text);
    // Without the key the second accept is an illegal edge.
    let r = app.call("POST", &path, Some(&courier), None).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn concurrent_retries_apply_once() {
    let app = std::sync::Arc::new(App::new());
    let (_, token) = app.online_courier(ADMIN, "Ana", (-74.667, 40.3515)).await;
    let body = json!({ "position": { "lon": -74.667, "lat": 40.3515 }, "text": "Stairs only" });
    let mut handles = Vec::new();
    for _ in 0..8 {
        let (app, token, body) = (app.clone(), token.clone(), body.clone());
        handles.push(tokio::spawn(async move {
            keyed(&app, "POST", "/api/courier/v1/location-notes", &token, "burst", Some(body)).await.text
        }));
    }
    let mut texts = Vec::new();
    for h in handles {
        texts.push(h.await.unwrap());
    }
    assert!(texts.windows(2).all(|w| w[0] == w[1]));
    let r = app.call("GET", "/api/courier/v1/location-notes", Some(&token), None).await;
    assert_eq!(r.body.as_array().unwrap().len(), 1);
}
