//! Replay protection for state-changing requests carrying an
//! `Idempotency-Key` header.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{Request, State};
use axum::http::header::AUTHORIZATION;
use axum::http::{HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::Next;
use axum::response::Response;
use parking_lot::Mutex;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::error_response;
use crate::AppState;

pub const HEADER: &str = "idempotency-key";
pub const REPLAY_HEADER: &str = "idempotent-replay";
const MAX_BODY: usize = 2 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Key {
    principal: [u8; 32],
    method: Method,
    path: String,
    key: String,
}

struct Cached {
    request_digest: [u8; 32],
    status: StatusCode,
    headers: HeaderMap,
    body: Bytes,
}

type Slot = Arc<tokio::sync::Mutex<Option<Cached>>>;

pub struct IdempotencyCache {
    slots: Mutex<(HashMap<Key, Slot>, VecDeque<Key>)>,
    capacity: usize,
}

impl IdempotencyCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            slots: Mutex::new((HashMap::new(), VecDeque::new())),
            capacity: capacity.max(1),
        }
    }

    fn slot(&self, key: Key) -> Slot {
        let mut guard = self.slots.lock();
        let (map, order) = &mut *guard;
        if let Some(s) = map.get(&key) {
            return s.clone();
        }
        while map.len() >= self.capacity {
            match order.pop_front() {
                Some(old) => {
                    map.remove(&old);
                }
                None => break,
            }
        }
        let s: Slot = Default::default();
        map.insert(key.clone(), s.clone());
        order.push_back(key);
        s
    }
}

impl Default for IdempotencyCache {
    fn default() -> Self {
        Self::new(10_000)
    }
}

fn rebuild(c: &Cached, replay: bool) -> Response {
    let mut resp = Response::new(Body::from(c.body.clone()));
    *resp.status_mut() = c.status;
    *resp.headers_mut() = c.headers.clone();
    if replay {
        resp.headers_mut().insert(REPLAY_HEADER, HeaderValue::from_static("true"));
    }
    resp
}

pub async fn middleware(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if matches!(*req.method(), Method::GET | Method::HEAD | Method::OPTIONS) {
        return next.run(req).await;
    }
    let Some(idem) = req.headers().get(HEADER).and_then(|v| v.to_str().ok()).map(str::to_owned) else {
        return next.run(req).await;
    };
    let principal: [u8; 32] = Sha256::digest(
        req.headers().get(AUTHORIZATION).map(HeaderValue::as_bytes).unwrap_or_default(),
    )
    .into();
    let key = Key {
        principal,
        method: req.method().clone(),
        path: req.uri().path_and_query().map(|p| p.to_string()).unwrap_or_default(),
        key: idem,
    };
    let (parts, body) = req.into_parts();
    let bytes = match to_bytes(body, MAX_BODY).await {
        Ok(b) => b,
        Err(e) => {
            return error_response(StatusCode::BAD_REQUEST, "VALIDATION_ERROR", &e.to_string(), json!({}));
        }
    };
    let request_digest: [u8; 32] = Sha256::digest(&bytes).into();
    let slot = state.idempotency.slot(key);
    let mut cached = slot.lock().await;
    if let Some(c) = cached.as_ref() {
        if c.request_digest == request_digest {
            return rebuild(c, true);
        }
        return error_response(
            StatusCode::UNPROCESSABLE_ENTITY,
            "IDEMPOTENCY_CONFLICT",
            "Idempotency-Key was already used with a different request body",
            json!({}),
        );
    }
    let resp = next.run(Request::from_parts(parts, Body::from(bytes))).await;
    let (rparts, rbody) = resp.into_parts();
    let body = match to_bytes(rbody, usize::MAX).await {
        Ok(b) => b,
        Err(e) => {
            return error_response(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", &e.to_string(), json!({}));
        }
    };
    let c = Cached {
        request_digest,
        status: rparts.status,
        headers: rparts.headers,
        body,
    };
    let out = rebuild(&c, false);
    if !c.status.is_server_error() {
        *cached = Some(c);
    }
    out
}
