//! HTTP routes.
//!
//! | method | path | body | response |
//! |---|---|---|---|
//! | POST | `/trials` | `{config, seed?}` | 201 `TrialView` |
//! | GET | `/trials` | | `[TrialView]` ordered by creation |
//! | GET | `/trials/{id}` | | `TrialView` |
//! | POST | `/trials/{id}/cohorts` | `{seq, outcomes: [{activity, safety_issue}]}` | `CohortResponse` |
//! | GET | `/trials/{id}/posterior` | | `PosteriorView` |
//! | GET | `/trials/{id}/events` | | `[LogRecord]` |
//!
//! Errors are `{"error": {"code", "message", "field"?}}`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use plateau_core::design::{CohortOutcome, DesignConfig};
use serde::Deserialize;
use serde_json::Value;
use tokio::sync::Mutex;

use crate::error::{Result, ServiceError};
use crate::log::LogRecord;
use crate::session::{CohortResponse, PosteriorView, Snapshot, TrialSession, TrialView};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;
pub type IdSource = Arc<dyn Fn() -> String + Send + Sync>;
pub type SeedSource = Arc<dyn Fn() -> u64 + Send + Sync>;

struct Handle {
    writer: Mutex<TrialSession>,
    snapshot: RwLock<Arc<Snapshot>>,
}

impl Handle {
    fn new(session: TrialSession) -> Self {
        let snap = Arc::new(session.snapshot());
        Self {
            writer: Mutex::new(session),
            snapshot: RwLock::new(snap),
        }
    }

    fn read(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock poisoned").clone()
    }

    fn publish(&self, session: &TrialSession) {
        *self.snapshot.write().expect("snapshot lock poisoned") = Arc::new(session.snapshot());
    }
}

struct Inner {
    data_dir: PathBuf,
    trials: RwLock<HashMap<String, Arc<Handle>>>,
    order: RwLock<Vec<String>>,
    clock: Clock,
    ids: IdSource,
    seeds: SeedSource,
}

/// Shared service state. Cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// Opens every `*.jsonl` log in `data_dir`, creating the directory if
    /// needed. Uses the wall clock, random v4 ids and random seeds.
    pub fn open(data_dir: &Path) -> Result<Self> {
        Self::with_sources(
            data_dir,
            Arc::new(Utc::now),
            Arc::new(|| uuid::Uuid::new_v4().to_string()),
            Arc::new(rand::random::<u64>),
        )
    }

    pub fn with_sources(
        data_dir: &Path,
        clock: Clock,
        ids: IdSource,
        seeds: SeedSource,
    ) -> Result<Self> {
        std::fs::create_dir_all(data_dir)?;
        let mut found = Vec::new();
        for entry in std::fs::read_dir(data_dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(String::from) else {
                continue;
            };
            if let Some(session) = TrialSession::open(id, &path, clock())? {
                found.push(session);
            }
        }
        found.sort_by(|a, b| {
            let ka = (a.snapshot().trial.created_at, a.id().to_string());
            let kb = (b.snapshot().trial.created_at, b.id().to_string());
            ka.cmp(&kb)
        });
        let order = found.iter().map(|s| s.id().to_string()).collect();
        let trials = found
            .into_iter()
            .map(|s| (s.id().to_string(), Arc::new(Handle::new(s))))
            .collect();
        Ok(Self {
            inner: Arc::new(Inner {
                data_dir: data_dir.to_path_buf(),
                trials: RwLock::new(trials),
                order: RwLock::new(order),
                clock,
                ids,
                seeds,
            }),
        })
    }

    fn handle(&self, id: &str) -> Result<Arc<Handle>> {
        self.inner
            .trials
            .read()
            .expect("trial map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    pub fn create_trial(&self, config: DesignConfig, seed: Option<u64>) -> Result<TrialView> {
        let id = (self.inner.ids)();
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(ServiceError::BadRequest(format!("unusable trial id `{id}`")));
        }
        let seed = seed.unwrap_or_else(|| (self.inner.seeds)());
        let path = self.inner.data_dir.join(format!("{id}.jsonl"));
        let session = TrialSession::create(id.clone(), config, seed, &path, (self.inner.clock)())?;
        let handle = Arc::new(Handle::new(session));
        let view = handle.read().trial.clone();
        self.inner
            .trials
            .write()
            .expect("trial map poisoned")
            .insert(id.clone(), handle);
        self.inner.order.write().expect("order poisoned").push(id);
        Ok(view)
    }

    pub fn list(&self) -> Vec<TrialView> {
        let order = self.inner.order.read().expect("order poisoned").clone();
        order
            .iter()
            .filter_map(|id| self.handle(id).ok())
            .map(|h| h.read().trial.clone())
            .collect()
    }

    pub fn trial(&self, id: &str) -> Result<TrialView> {
        Ok(self.handle(id)?.read().trial.clone())
    }

    pub fn posterior(&self, id: &str) -> Result<PosteriorView> {
        Ok(self.handle(id)?.read().posterior.clone())
    }

    pub fn events(&self, id: &str) -> Result<Vec<LogRecord>> {
        Ok(self.handle(id)?.read().events.clone())
    }

    pub async fn record_cohort(
        &self,
        id: &str,
        seq: usize,
        outcomes: &[CohortOutcome],
    ) -> Result<CohortResponse> {
        let handle = self.handle(id)?;
        let mut session = handle.writer.lock().await;
        let response = session.record_cohort(seq, outcomes, (self.inner.clock)())?;
        handle.publish(&session);
        Ok(response)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    config: Value,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CohortBody {
    seq: usize,
    outcomes: Vec<CohortOutcome>,
}

fn body<T>(payload: std::result::Result<Json<T>, JsonRejection>) -> Result<T> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ServiceError::BadRequest(e.body_text()))
}

async fn create(
    State(app): State<AppState>,
    payload: std::result::Result<Json<CreateBody>, JsonRejection>,
) -> Result<impl IntoResponse> {
    let req = body(payload)?;
    // Parsed separately so config problems come back as 422 with a field.
    let config = DesignConfig::from_json_str(&req.config.to_string())
        .map_err(ServiceError::from_core)?;
    let view = app.create_trial(config, req.seed)?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn list(State(app): State<AppState>) -> Json<Vec<TrialView>> {
    Json(app.list())
}

async fn show(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<TrialView>> {
    app.trial(&id).map(Json)
}

async fn cohorts(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    payload: std::result::Result<Json<CohortBody>, JsonRejection>,
) -> Result<Json<CohortResponse>> {
    // Unknown trials are reported before body problems.
    app.handle(&id)?;
    let req = body(payload)?;
    app.record_cohort(&id, req.seq, &req.outcomes).await.map(Json)
}

async fn posterior(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<PosteriorView>> {
    app.posterior(&id).map(Json)
}

async fn events(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Vec<LogRecord>>> {
    app.events(&id).map(Json)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/trials", post(create).get(list))
        .route("/trials/{id}", get(show))
        .route("/trials/{id}/cohorts", post(cohorts))
        .route("/trials/{id}/posterior", get(posterior))
        .route("/trials/{id}/events", get(events))
        .with_state(state)
}
