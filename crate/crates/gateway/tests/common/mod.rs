#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use chrono::{DateTime, TimeZone, Utc};
use opencourier_core::clock::ManualClock;
use opencourier_core::sample;
use opencourier_gateway::config::ServerConfig;
use opencourier_gateway::{build_state, routes, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

pub const DOMAIN: &str = "nosh.example";
pub const OTHER: &str = "bike.example";
pub const ADMIN: &str = "admin-token-nosh-0123456789";
pub const OTHER_ADMIN: &str = "admin-token-bike-0123456789";
pub const REGISTRY_ADMIN: &str = "registry-admin-token-0123456789";

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 3, 2, 15, 0, 0).unwrap()
}

pub fn config_json() -> String {
    let territory = serde_json::to_value(sample::territory()).unwrap();
    json!({
        "maxRounds": 5,
        "registryAdminToken": REGISTRY_ADMIN,
        "instances": [
            { "domain": DOMAIN, "currency": "USD", "territory": territory, "adminToken": ADMIN },
            { "domain": OTHER, "currency": "USD", "territory": territory, "adminToken": OTHER_ADMIN }
        ]
    })
    .to_string()
}

pub struct App {
    pub state: AppState,
    pub router: Router,
    pub clock: Arc<ManualClock>,
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Value,
    pub text: String,
}

impl App {
    pub fn new() -> Self {
        let cfg = ServerConfig::from_json(&config_json(), &BTreeMap::new()).unwrap();
        let clock = Arc::new(ManualClock::new(t0()));
        let state = build_state(&cfg, clock.clone()).unwrap();
        for d in [DOMAIN, OTHER] {
            state.fed.registry.register(sample::instance_record(d)).unwrap();
        }
        let router = routes::router(state.clone());
        Self { state, router, clock }
    }

    pub async fn send(&self, req: Request<Body>) -> Reply {
        let res = self.router.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let headers = res.headers().clone();
        let bytes = to_bytes(res.into_body(), usize::MAX).await.unwrap();
        let text = String::from_utf8(bytes.to_vec()).unwrap();
        let body = serde_json::from_str(&text).unwrap_or(Value::Null);
        Reply { status, headers, body, text }
    }

    pub fn request(method: &str, path: &str, token: Option<&str>, body: Option<&Value>) -> axum::http::request::Builder {
        let mut b = Request::builder().method(Method::from_bytes(method.as_bytes()).unwrap()).uri(path);
        if let Some(t) = token {
            b = b.header("authorization", format!("Bearer {t}"));
        }
        if body.is_some() {
            b = b.header("content-type", "application/json");
        }
        b
    }

    pub async fn call(&self, method: &str, path: &str, token: Option<&str>, body: Option<Value>) -> Reply {
        let req = Self::request(method, path, token, body.as_ref())
            .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
            .unwrap();
        self.send(req).await
    }

    /// Enrolls a courier, brings it online at `pos` and returns (id, token).
    pub async fn online_courier(&self, admin: &str, name: &str, pos: (f64, f64)) -> (String, String) {
        let r = self.call("POST", "/api/admin/v1/couriers", Some(admin), Some(json!({ "name": name }))).await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
        let id = r.body["courier"]["courierId"].as_str().unwrap().to_owned();
        let token = r.body["token"].as_str().unwrap().to_owned();
        let r = self
            .call("PUT", "/api/courier/v1/location", Some(&token), Some(json!({ "lon": pos.0, "lat": pos.1 })))
            .await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text);
        let r = self
            .call("PUT", "/api/courier/v1/status", Some(&token), Some(json!({ "availability": "ONLINE" })))
            .await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text);
        (id, token)
    }

    pub async fn requester(&self) -> String {
        let r = self.call("POST", "/api/admin/v1/requesters", Some(ADMIN), None).await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
        r.body["token"].as_str().unwrap().to_owned()
    }

    pub fn quote(&self) -> Value {
        serde_json::to_value(sample::quote(self.clock.now_utc())).unwrap()
    }

    /// Negotiates and finalizes one quote with `domain` at the asking price;
    /// returns the created delivery.
    pub async fn finalized_delivery(&self, requester: &str, admin: &str, domain: &str) -> Value {
        let r = self
            .call(
                "POST",
                "/api/requester/v1/quotes",
                Some(requester),
                Some(json!({ "instanceDomain": domain, "quote": self.quote() })),
            )
            .await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
        let tid = r.body["threadId"].as_str().unwrap().to_owned();
        let r = self
            .call(
                "POST",
                &format!("/api/instance/v1/quotes/{tid}/respond"),
                Some(admin),
                Some(json!({ "kind": "ACCEPT" })),
            )
            .await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text);
        let r = self
            .call("POST", &format!("/api/requester/v1/quotes/{tid}/finalize"), Some(requester), None)
            .await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text);
        r.body["delivery"].clone()
    }
}

pub trait NowUtc {
    fn now_utc(&self) -> DateTime<Utc>;
}

impl NowUtc for ManualClock {
    fn now_utc(&self) -> DateTime<Utc> {
        use opencourier_core::clock::Clock;
        self.now()
    }
}

/// Asserts the standard error envelope and returns its code.
pub fn error_code(r: &Reply) -> String {
    let err = r.body.get("error").unwrap_or_else(|| panic!("no envelope: {}", r.text));
    let obj = err.as_object().unwrap();
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["code", "details", "message"], "{}", r.text);
    assert_eq!(r.body.as_object().unwrap().len(), 1, "{}", r.text);
    assert!(err["code"].is_string() && err["message"].is_string() && err["details"].is_object(), "{}", r.text);
    err["code"].as_str().unwrap().to_owned()
}
