mod common;

use axum::body::Body;
use axum::http::StatusCode;
use chrono::Duration;
use common::{error_code, App, ADMIN, DOMAIN, OTHER, OTHER_ADMIN, REGISTRY_ADMIN};
use opencourier_core::sample;
use serde_json::{json, Value};

const NEAR: (f64, f64) = (-74.6670, 40.3515);
const FAR: (f64, f64) = (-74.6570, 40.3440);

#[tokio::test]
async fn missing_malformed_and_revoked_tokens_are_401() {
    let app = App::new();
    let r = app.call("GET", "/api/courier/v1/deliveries/new", None, None).await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::UNAUTHORIZED, "UNAUTHENTICATED"));

    let req = App::request("GET", "/api/courier/v1/deliveries/new", None, None)
        .header("authorization", "Basic Zm9vOmJhcg==")
        .body(Body::empty())
        .unwrap();
    let r = app.send(req).await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);

    let r = app.call("GET", "/api/courier/v1/deliveries/new", Some("not-a-real-token-at-all"), None).await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);

    let (id, token) = app.online_courier(ADMIN, "Ana", NEAR).await;
    let r = app.call("GET", "/api/courier/v1/deliveries/new", Some(&token), None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body, json!([]));

    let r = app
        .call("POST", &format!("/api/admin/v1/couriers/{id}/revoke-token"), Some(ADMIN), None)
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    let r = app.call("GET", "/api/courier/v1/deliveries/new", Some(&token), None).await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::UNAUTHORIZED, "UNAUTHENTICATED"));
}

#[tokio::test]
async fn roles_are_scoped_to_their_routes() {
    let app = App::new();
    let (_, courier) = app.online_courier(ADMIN, "Ana", NEAR).await;
    let requester = app.requester().await;

    let r = app.call("GET", "/api/courier/v1/deliveries/new", Some(ADMIN), None).await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::FORBIDDEN, "UNAUTHORIZED"));
    let r = app.call("GET", "/api/admin/v1/deliveries", Some(&courier), None).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
    let r = app.call("GET", "/api/requester/v1/quotes", Some(&courier), None).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
    let r = app.call("GET", "/api/admin/v1/assignment-policy", Some(&requester), None).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
    let r = app
        .call("GET", "/api/admin/v1/disclosure/metrics?from=2026-03-01T00:00:00Z&to=2026-03-03T00:00:00Z", Some(&courier), None)
        .await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
    // The registry-wide admin is not bound to an instance.
    let r = app.call("GET", "/api/admin/v1/deliveries", Some(REGISTRY_ADMIN), None).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);

    let r = app.call("GET", "/api/admin/v1/assignment-policy", Some(ADMIN), None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body["policy"], "NEAREST");
}

#[tokio::test]
async fn full_lifecycle_over_the_api() {
    let app = App::new();
    let (near_id, near) = app.online_courier(ADMIN, "Ana", NEAR).await;
    let (_far_id, far) = app.online_courier(ADMIN, "Ben", FAR).await;
    let requester = app.requester().await;

    let d = app.finalized_delivery(&requester, ADMIN, DOMAIN).await;
    let did = d["deliveryId"].as_str().unwrap().to_owned();
    assert_eq!(d["status"], "DISPATCHED");
    assert_eq!(d["courierId"], near_id.as_str());
    assert_eq!(d["payout"], json!(10.8));

    let r = app.call("GET", "/api/courier/v1/deliveries/new", Some(&near), None).await;
    assert_eq!(r.body.as_array().unwrap().len(), 1);
    let r = app.call("GET", "/api/courier/v1/deliveries/new", Some(&far), None).await;
    assert_eq!(r.body, json!([]));

    // Someone else's delivery.
    let r = app
        .call("POST", &format!("/api/courier/v1/deliveries/{did}/accept"), Some(&far), None)
        .await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::FORBIDDEN, "FORBIDDEN_ACTOR"));

    // Skipping ahead is an illegal edge.
    let r = app
        .call("POST", &format!("/api/courier/v1/deliveries/{did}/mark-as-delivered"), Some(&near), None)
        .await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::CONFLICT, "ILLEGAL_TRANSITION"));

    let steps = [
        ("accept", "ACCEPTED", "NONE"),
        ("arrived-at-pickup", "ACCEPTED", "ARRIVED_AT_PICKUP"),
        ("mark-as-picked-up", "PICKED_UP", "ARRIVED_AT_PICKUP"),
        ("mark-as-on-the-way", "PICKED_UP", "ON_THE_WAY"),
        ("arrived-at-dropoff", "PICKED_UP", "ARRIVED_AT_DROPOFF"),
        ("mark-as-delivered", "DELIVERED", "ARRIVED_AT_DROPOFF"),
    ];
    for (action, status, _) in steps {
        app.clock.advance(Duration::minutes(3));
        let r = app
            .call("POST", &format!("/api/courier/v1/deliveries/{did}/{action}"), Some(&near), None)
            .await;
        assert_eq!(r.status, StatusCode::OK, "{action}: {}", r.text);
        assert_eq!(r.body["status"], status, "{action}");
        if action == "accept" {
            let r = app.call("GET", "/api/courier/v1/deliveries/in-progress", Some(&near), None).await;
            assert_eq!(r.body.as_array().unwrap().len(), 1);
        }
    }
    let r = app.call("GET", "/api/courier/v1/deliveries/done", Some(&near), None).await;
    assert_eq!(r.body.as_array().unwrap().len(), 1);

    let r = app
        .call(
            "PATCH",
            &format!("/api/courier/v1/deliveries/{did}/report-issue"),
            Some(&near),
            Some(json!({ "code": "DAMAGED_ITEM", "note": "lid cracked" })),
        )
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    assert_eq!(r.body["status"], "DELIVERED");
    assert_eq!(r.body["issue"]["code"], "DAMAGED_ITEM");

    let r = app.call("GET", &format!("/api/admin/v1/deliveries/{did}"), Some(ADMIN), None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body["history"].as_array().unwrap().len(), 8);
    let task = r.body["taskId"].as_str().unwrap().to_owned();
    let r = app.call("GET", &format!("/api/admin/v1/tasks/{task}"), Some(ADMIN), None).await;
    assert_eq!(r.body["state"], "COMPLETED");

    // Another instance cannot see it.
    let r = app.call("GET", &format!("/api/admin/v1/deliveries/{did}"), Some(OTHER_ADMIN), None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    let range = "from=2026-03-02T00:00:00Z&to=2026-03-03T00:00:00Z";
    let r = app
        .call("GET", &format!("/api/admin/v1/disclosure/metrics?{range}"), Some(ADMIN), None)
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    assert_eq!(r.body["deliveriesCompleted"], 1);
    assert_eq!(r.body["avgDurationMinutes"], json!(15.0));

    let r = app
        .call("GET", &format!("/api/admin/v1/disclosure/export.csv?{range}&salt=pinned"), Some(ADMIN), None)
        .await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.headers["content-type"].to_str().unwrap().starts_with("text/csv"));
    assert_eq!(r.text.lines().count(), 2, "{}", r.text);
    assert!(!r.text.contains(&did) && !r.text.contains(&near_id));

    let r = app
        .call("GET", "/api/admin/v1/disclosure/metrics?from=2026-03-03T00:00:00Z&to=2026-03-02T00:00:00Z", Some(ADMIN), None)
        .await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::BAD_REQUEST, "EMPTY_RANGE"));
}

#[tokio::test]
async fn reject_redispatches_to_the_next_courier() {
    let app = App::new();
    let (_, near) = app.online_courier(ADMIN, "Ana", NEAR).await;
    let (far_id, far) = app.online_courier(ADMIN, "Ben", FAR).await;
    let requester = app.requester().await;
    let d = app.finalized_delivery(&requester, ADMIN, DOMAIN).await;
    let did = d["deliveryId"].as_str().unwrap();
    let r = app
        .call("POST", &format!("/api/courier/v1/deliveries/{did}/reject"), Some(&near), None)
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    assert_eq!(r.body["status"], "REJECTED");
    let r = app.call("GET", "/api/courier/v1/deliveries/new", Some(&far), None).await;
    let list = r.body.as_array().unwrap();
    assert_eq!(list.len(), 1);
    assert_eq!(list[0]["courierId"], far_id.as_str());
    assert_eq!(list[0]["attempt"], 2);
    assert_eq!(list[0]["taskId"], d["taskId"]);
}

#[tokio::test]
async fn policy_switch_changes_the_next_dispatch() {
    let app = App::new();
    let (senior, senior_token) = app.online_courier(ADMIN, "Senior", FAR).await;
    app.clock.advance(Duration::days(30));
    let (nearest, _) = app.online_courier(ADMIN, "Junior", NEAR).await;
    // Refresh the senior courier's fix so both are eligible.
    let (lon, lat) = FAR;
    app.call("PUT", "/api/courier/v1/location", Some(&senior_token), Some(json!({ "lon": lon, "lat": lat })))
        .await;
    let requester = app.requester().await;

    let d = app.finalized_delivery(&requester, ADMIN, DOMAIN).await;
    assert_eq!(d["courierId"], nearest.as_str());

    let r = app
        .call("PUT", "/api/admin/v1/assignment-policy", Some(ADMIN), Some(json!({ "policy": "MOST_SENIOR", "maxActive": 3 })))
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    let d = app.finalized_delivery(&requester, ADMIN, DOMAIN).await;
    assert_eq!(d["courierId"], senior.as_str());

    let r = app
        .call("PUT", "/api/admin/v1/assignment-policy", Some(ADMIN), Some(json!({ "policy": "SPECIFIED", "courierId": nearest })))
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    let r = app.call("GET", "/api/admin/v1/assignment-policy/history", Some(ADMIN), None).await;
    assert_eq!(r.body.as_array().unwrap().len(), 2);

    let r = app
        .call("PUT", "/api/admin/v1/assignment-policy", Some(ADMIN), Some(json!({ "policy": "FASTEST" })))
        .await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::BAD_REQUEST, "VALIDATION_ERROR"));
}

#[tokio::test]
async fn no_candidate_waits_for_a_courier() {
    let app = App::new();
    let requester = app.requester().await;
    let d = app.finalized_delivery(&requester, ADMIN, DOMAIN).await;
    assert_eq!(d["status"], "CREATED");
    let did = d["deliveryId"].as_str().unwrap().to_owned();
    let (cid, _) = app.online_courier(ADMIN, "Late", NEAR).await;
    let r = app.call("GET", &format!("/api/admin/v1/deliveries/{did}"), Some(ADMIN), None).await;
    assert_eq!(r.body["status"], "DISPATCHED");
    assert_eq!(r.body["courierId"], cid.as_str());
}

#[tokio::test]
async fn admin_cancel_closes_the_task() {
    let app = App::new();
    let (_, courier) = app.online_courier(ADMIN, "Ana", NEAR).await;
    let requester = app.requester().await;
    let d = app.finalized_delivery(&requester, ADMIN, DOMAIN).await;
    let did = d["deliveryId"].as_str().unwrap();
    let r = app
        .call("PATCH", &format!("/api/admin/v1/deliveries/{did}/cancel"), Some(ADMIN), Some(json!({ "reason": "store closed" })))
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    assert_eq!(r.body["status"], "CANCELED");
    let r = app.call("GET", "/api/courier/v1/deliveries/done", Some(&courier), None).await;
    assert_eq!(r.body.as_array().unwrap().len(), 1);
    let r = app.call("GET", "/api/admin/v1/deliveries?status=CANCELED", Some(ADMIN), None).await;
    assert_eq!(r.body.as_array().unwrap().len(), 1);
    let r = app.call("GET", "/api/admin/v1/deliveries?status=DELIVERED", Some(ADMIN), None).await;
    assert_eq!(r.body, json!([]));
}

#[tokio::test]
async fn negotiation_over_http() {
    let app = App::new();
    let requester = app.requester().await;
    let other = app.requester().await;
    let r = app
        .call("POST", "/api/requester/v1/quotes", Some(&requester), Some(json!({ "instanceDomain": DOMAIN, "quote": app.quote() })))
        .await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
    assert_eq!(r.body["state"], "OPEN");
    let tid = r.body["threadId"].as_str().unwrap().to_owned();

    // Requester made the opening offer, so it is the instance's turn.
    let r = app
        .call("POST", &format!("/api/requester/v1/quotes/{tid}/respond"), Some(&requester), Some(json!({ "kind": "ACCEPT" })))
        .await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::CONFLICT, "OUT_OF_TURN"));

    let r = app
        .call("POST", &format!("/api/instance/v1/quotes/{tid}/respond"), Some(ADMIN), Some(json!({ "kind": "COUNTER", "amount": 14.00, "message": "rain" })))
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    assert_eq!(r.body["rounds"].as_array().unwrap().len(), 2);

    // Other parties cannot see or touch the thread.
    let r = app.call("GET", &format!("/api/requester/v1/quotes/{tid}"), Some(&other), None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = app.call("GET", &format!("/api/instance/v1/quotes/{tid}"), Some(OTHER_ADMIN), None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    let r = app
        .call("POST", &format!("/api/requester/v1/quotes/{tid}/finalize"), Some(&requester), None)
        .await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::CONFLICT, "NOT_ACCEPTED"));

    let r = app
        .call("POST", &format!("/api/requester/v1/quotes/{tid}/respond"), Some(&requester), Some(json!({ "kind": "ACCEPT" })))
        .await;
    assert_eq!(r.body["state"], "ACCEPTED");
    assert_eq!(r.body["agreedAmount"], json!(14.0));

    let r = app
        .call("POST", &format!("/api/requester/v1/quotes/{tid}/finalize"), Some(&requester), None)
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    assert_eq!(r.body["thread"]["state"], "FINALIZED");
    assert_eq!(r.body["delivery"]["payout"], json!(12.6));
    let r = app
        .call("POST", &format!("/api/requester/v1/quotes/{tid}/finalize"), Some(&requester), None)
        .await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::CONFLICT, "ALREADY_FINALIZED"));

    let r = app.call("GET", "/api/instance/v1/quotes", Some(ADMIN), None).await;
    assert_eq!(r.body.as_array().unwrap().len(), 1);
    let r = app.call("GET", "/api/instance/v1/quotes", Some(OTHER_ADMIN), None).await;
    assert_eq!(r.body, json!([]));
}

#[tokio::test]
async fn broadcast_has_one_winner() {
    let app = App::new();
    let requester = app.requester().await;
    let (lon, lat) = NEAR;
    let r = app
        .call(
            "POST",
            "/api/requester/v1/quotes/broadcast",
            Some(&requester),
            Some(json!({ "filter": { "lon": lon, "lat": lat }, "quote": app.quote() })),
        )
        .await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
    let threads = r.body["threads"].as_array().unwrap().clone();
    assert_eq!(threads.len(), 2);
    let by_domain = |d: &str| threads.iter().find(|t| t["instanceDomain"] == d).unwrap()["threadId"].as_str().unwrap().to_owned();
    let (a, b) = (by_domain(DOMAIN), by_domain(OTHER));

    let r = app
        .call("POST", &format!("/api/instance/v1/quotes/{b}/respond"), Some(OTHER_ADMIN), Some(json!({ "kind": "ACCEPT" })))
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    let r = app
        .call("POST", &format!("/api/instance/v1/quotes/{a}/respond"), Some(ADMIN), Some(json!({ "kind": "ACCEPT" })))
        .await;
    assert_eq!(r.status, StatusCode::CONFLICT, "{}", r.text);
    let r = app.call("GET", &format!("/api/requester/v1/quotes/{a}"), Some(&requester), None).await;
    assert_eq!(r.body["state"], "REJECTED");

    let r = app
        .call("POST", "/api/requester/v1/quotes/broadcast", Some(&requester), Some(json!({ "filter": { "lon": 10.0, "lat": 10.0 }, "quote": app.quote() })))
        .await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::NOT_FOUND, "NO_MATCHING_INSTANCE"));
    let r = app
        .call("POST", "/api/requester/v1/quotes", Some(&requester), Some(json!({ "instanceDomain": "nowhere.example", "quote": app.quote() })))
        .await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::NOT_FOUND, "UNKNOWN_INSTANCE"));
}

#[tokio::test]
async fn malformed_bodies() {
    let app = App::new();
    let requester = app.requester().await;
    let req = App::request("POST", "/api/requester/v1/quotes", Some(&requester), Some(&Value::Null))
        .body(Body::from("{\"instanceDomain\": "))
        .unwrap();
    let r = app.send(req).await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::BAD_REQUEST, "PARSE_ERROR"));

    let mut q = app.quote();
    q["surprise"] = json!(1);
    let r = app
        .call("POST", "/api/requester/v1/quotes", Some(&requester), Some(json!({ "instanceDomain": DOMAIN, "quote": q })))
        .await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::BAD_REQUEST, "VALIDATION_ERROR"));

    let mut q = app.quote();
    q["quote"] = json!(20.0);
    let r = app
        .call("POST", "/api/requester/v1/quotes", Some(&requester), Some(json!({ "instanceDomain": DOMAIN, "quote": q })))
        .await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::BAD_REQUEST, "VALIDATION_ERROR"));
    assert!(r.body["error"]["details"].as_object().is_some());
}

#[tokio::test]
async fn settings_use_etags() {
    let app = App::new();
    let (_, token) = app.online_courier(ADMIN, "Ana", NEAR).await;
    let r = app.call("GET", "/api/courier/v1/settings", Some(&token), None).await;
    assert_eq!(r.status, StatusCode::OK);
    let etag = r.headers["etag"].to_str().unwrap().to_owned();
    assert_eq!(r.body["deliverySpeed"], "REGULAR");
    assert!(r.body.get("deliveryPolygon").is_some());

    let patch = json!({ "shiftAvailability": { "monday": ["09:00-17:00"] }, "maxItemWeightLbs": 15 });
    let req = App::request("PATCH", "/api/courier/v1/settings", Some(&token), Some(&patch))
        .header("if-match", &etag)
        .body(Body::from(patch.to_string()))
        .unwrap();
    let r = app.send(req).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    assert_eq!(r.body["shiftAvailability"]["monday"], json!(["09:00-17:00"]));
    assert_ne!(r.headers["etag"].to_str().unwrap(), etag);

    // Stale precondition.
    let req = App::request("PATCH", "/api/courier/v1/settings", Some(&token), Some(&patch))
        .header("if-match", &etag)
        .body(Body::from(patch.to_string()))
        .unwrap();
    let r = app.send(req).await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::PRECONDITION_FAILED, "VERSION_CONFLICT"));

    let r = app
        .call("PATCH", "/api/courier/v1/settings", Some(&token), Some(json!({ "deliverySpeed": "WARP" })))
        .await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::BAD_REQUEST, "VALIDATION_ERROR"));
    let r = app
        .call("PATCH", "/api/courier/v1/settings", Some(&token), Some(json!({ "favouriteColour": "red" })))
        .await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn location_notes() {
    let app = App::new();
    let (_, ana) = app.online_courier(ADMIN, "Ana", NEAR).await;
    let (_, ben) = app.online_courier(ADMIN, "Ben", FAR).await;
    let (lon, lat) = NEAR;
    let r = app
        .call("POST", "/api/courier/v1/location-notes", Some(&ana), Some(json!({ "position": { "lon": lon, "lat": lat }, "text": "Use the side door" })))
        .await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
    let nid = r.body["locationNoteId"].as_str().unwrap().to_owned();

    let r = app
        .call("PATCH", &format!("/api/courier/v1/location-notes/{nid}"), Some(&ben), Some(json!({ "text": "mine now" })))
        .await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::FORBIDDEN, "FORBIDDEN_ACTOR"));
    let r = app
        .call("PATCH", &format!("/api/courier/v1/location-notes/{nid}"), Some(&ana), Some(json!({ "text": "Side door, ring twice" })))
        .await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body["text"], "Side door, ring twice");

    let r = app
        .call("POST", &format!("/api/courier/v1/location-notes/{nid}/react"), Some(&ben), Some(json!({ "emoji": "👍" })))
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    assert_eq!(r.body["reactions"]["👍"].as_array().unwrap().len(), 1);

    let r = app
        .call("GET", &format!("/api/courier/v1/location-notes/near?lon={lon}&lat={lat}&radius=100"), Some(&ben), None)
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    assert_eq!(r.body.as_array().unwrap().len(), 1);
    assert!(r.body[0]["distanceMeters"].as_f64().unwrap() < 1.0);

    let r = app.call("GET", "/api/courier/v1/location-notes", Some(&ana), None).await;
    assert_eq!(r.body.as_array().unwrap().len(), 1);
    let r = app.call("GET", "/api/courier/v1/location-notes", Some(&ben), None).await;
    assert_eq!(r.body, json!([]));

    let r = app.call("DELETE", &format!("/api/courier/v1/location-notes/{nid}"), Some(&ana), None).await;
    assert_eq!(r.status, StatusCode::NO_CONTENT);
    let r = app.call("GET", &format!("/api/courier/v1/location-notes/{nid}"), Some(&ana), None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    let r = app
        .call("POST", "/api/courier/v1/location-notes", Some(&ana), Some(json!({ "position": { "lon": 200.0, "lat": 0.0 }, "text": "x" })))
        .await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn registry_endpoints() {
    let app = App::new();
    let r = app.call("GET", "/api/registry/v1/instances", None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body.as_array().unwrap().len(), 2);
    let r = app.call("GET", "/api/registry/v1/instances?lon=10&lat=10", None, None).await;
    assert_eq!(r.body, json!([]));
    let r = app.call("GET", "/api/registry/v1/instances?lon=10", None, None).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let rec = serde_json::to_value(sample::instance_record("new.example")).unwrap();
    let r = app.call("POST", "/api/registry/v1/instances", None, Some(rec.clone())).await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);
    let r = app.call("POST", "/api/registry/v1/instances", Some(REGISTRY_ADMIN), Some(rec.clone())).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
    // Identical re-submission is harmless; a different record is not.
    let r = app.call("POST", "/api/registry/v1/instances", Some(REGISTRY_ADMIN), Some(rec.clone())).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let mut clash = rec.clone();
    clash["description"] = json!("Someone else");
    let r = app.call("POST", "/api/registry/v1/instances", Some(REGISTRY_ADMIN), Some(clash)).await;
    assert_eq!((r.status, error_code(&r).as_str()), (StatusCode::CONFLICT, "DUPLICATE_DOMAIN"));

    let mut renamed = rec.clone();
    renamed["instanceName"] = json!("Renamed");
    let r = app
        .call("PUT", "/api/registry/v1/instances/new.example", Some(REGISTRY_ADMIN), Some(renamed))
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    let r = app.call("GET", "/api/registry/v1/instances/new.example", None, None).await;
    assert_eq!(r.body["instanceName"], "Renamed");
    let r = app.call("GET", "/api/registry/v1/instances/missing.example", None, None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}
