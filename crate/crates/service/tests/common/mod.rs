#![allow(dead_code)]

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use chrono::{DateTime, Duration, Utc};
use http_body_util::BodyExt;
use plateau_service::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

/// State with a clock that ticks one second per reading and sequential ids.
pub fn deterministic_state(dir: &Path) -> AppState {
    let tick = Arc::new(AtomicU64::new(0));
    let ids = Arc::new(AtomicU64::new(0));
    let start = DateTime::<Utc>::from_timestamp(1_767_225_600, 0).unwrap();
    AppState::with_sources(
        dir,
        Arc::new(move || start + Duration::seconds(tick.fetch_add(1, Ordering::SeqCst) as i64)),
        Arc::new(move || format!("trial-{:04}", ids.fetch_add(1, Ordering::SeqCst) + 1)),
        Arc::new(|| 7),
    )
    .unwrap()
}

pub fn app(dir: &Path) -> Router {
    router(deterministic_state(dir))
}

pub struct Reply {
    pub status: StatusCode,
    pub body: Value,
    pub raw: String,
}

pub async fn call(app: &Router, method: Method, path: &str, body: Option<&Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(path);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let raw = String::from_utf8(bytes.to_vec()).unwrap();
    let body = serde_json::from_str(&raw).unwrap_or(Value::Null);
    Reply { status, body, raw }
}

pub fn config(method: &str, n: usize) -> Value {
    json!({
        "method": method,
        "n": n,
        "grid": {
            "levels": [1.0, 2.0, 3.0],
            "ref_level": 1,
            "target": 0.5,
            "initial_guesses": [0.5, 0.65, 0.8]
        }
    })
}

pub fn cohort(seq: usize, outcomes: &[(bool, bool)]) -> Value {
    let outcomes: Vec<Value> = outcomes
        .iter()
        .map(|&(a, s)| json!({"activity": a, "safety_issue": s}))
        .collect();
    json!({"seq": seq, "outcomes": outcomes})
}

pub fn inactive(k: usize) -> Vec<(bool, bool)> {
    vec![(false, false); k]
}
