//! One live trial: the core engine plus its event log.
//!
//! All design logic lives in the engine. The session only persists what the
//! engine emits and rebuilds the engine from the log on restart.

use std::path::Path;

use chrono::{DateTime, Utc};
use plateau_core::design::{
    AllocationDecision, CohortAssignment, CohortOutcome, DesignConfig, StopRecord, TraceEvent,
    TrialEngine, TrialPhase, TrialState,
};
use plateau_core::inference::{summarize, Integrator, ModelFit, PosteriorSummary};
use plateau_core::model::LevelCounts;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::log::{EventLog, LogRecord};

/// Trial as returned by the API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialView {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub config: DesignConfig,
    pub seed: u64,
    pub k_start: usize,
    pub phase: TrialPhase,
    pub enrolled: usize,
    /// Subjects treated at each level.
    pub allocated: Vec<usize>,
    /// Levels with no observed safety issue, `1..=l_prime`.
    pub safe_levels: Vec<usize>,
    /// Cohort the trial is waiting on, with `cohort_index` as the `seq` to send.
    pub pending: Option<CohortAssignment>,
    pub last_decision: Option<AllocationDecision>,
    pub stop: Option<StopRecord>,
    pub state: TrialState,
    /// Log file name inside the service's data directory.
    pub event_log_path: String,
}

/// Body of a successful cohort submission. Stored so a retransmission gets
/// the same bytes back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortResponse {
    pub seq: usize,
    pub decision: AllocationDecision,
    /// Refit made after this cohort, if the trial was in the model phase.
    pub summary: Option<PosteriorSummary>,
    pub events: Vec<LogRecord>,
    pub trial: TrialView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorView {
    /// True while no refit has happened; the numbers are then prior predictive.
    pub prior: bool,
    /// True once the trial has stopped.
    pub frozen: bool,
    /// Enrollment the fit is based on.
    pub enrolled: usize,
    pub target: f64,
    pub fits: Vec<ModelFit>,
    pub summary: PosteriorSummary,
}

/// Everything the read endpoints need, replaced wholesale after each write.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub trial: TrialView,
    pub posterior: PosteriorView,
    pub events: Vec<LogRecord>,
}

#[derive(Debug)]
pub struct TrialSession {
    id: String,
    engine: TrialEngine,
    log: EventLog,
    records: Vec<LogRecord>,
    responses: Vec<CohortResponse>,
    prior_fit: (Vec<ModelFit>, PosteriorSummary),
}

fn prior_predictive(config: &DesignConfig) -> Result<(Vec<ModelFit>, PosteriorSummary)> {
    let integrator = Integrator::new(&config.prior, config.grid.target(), &config.quadrature)
        .map_err(ServiceError::from_core)?;
    let counts = LevelCounts::from_subjects(&config.grid, &[]).map_err(ServiceError::from_core)?;
    summarize(config.method, &config.grid, &config.prior, &counts, &integrator)
        .map_err(ServiceError::from_core)
}

impl TrialSession {
    pub fn create(
        id: String,
        config: DesignConfig,
        seed: u64,
        path: &Path,
        now: DateTime<Utc>,
    ) -> Result<Self> {
        let engine = TrialEngine::new(config, seed).map_err(ServiceError::from_core)?;
        let prior_fit = prior_predictive(engine.config())?;
        let mut log = EventLog::create(path)?;
        let records = log.append(&engine.initial_events(), now)?;
        Ok(Self {
            id,
            engine,
            log,
            records,
            responses: Vec::new(),
            prior_fit,
        })
    }

    /// Rebuilds a session by feeding the logged outcomes back through a fresh
    /// engine. Logged decisions must match what the engine produces; events
    /// lost to a crash between the outcomes and their derived records are
    /// regenerated and appended. A log left empty by a crash during creation
    /// is removed and `None` returned.
    pub fn open(id: String, path: &Path, now: DateTime<Utc>) -> Result<Option<Self>> {
        let recovered = EventLog::open(path)?;
        if recovered.records.is_empty() {
            tracing::warn!(trial = %id, "removing empty log of an unfinished create");
            drop(recovered);
            std::fs::remove_file(path)?;
            return Ok(None);
        }
        if recovered.truncated > 0 {
            tracing::warn!(trial = %id, bytes = recovered.truncated, "truncated torn log tail");
        }
        let corrupt = |message: String| ServiceError::CorruptLog {
            path: path.display().to_string(),
            message,
        };
        let records = recovered.records;
        let mut log = recovered.log;

        let (config, seed) = match records.first().map(|r| &r.event) {
            Some(TraceEvent::Created { config, seed, .. }) => (config.clone(), *seed),
            Some(other) => {
                return Err(corrupt(format!("first record is `{}`, not `created`", other.kind())))
            }
            None => unreachable!("empty logs handled above"),
        };
        let mut engine = TrialEngine::new(config, seed).map_err(|e| corrupt(e.to_string()))?;
        let prior_fit = prior_predictive(engine.config())?;
        let initial = engine.initial_events();
        let mut session_records: Vec<LogRecord> = Vec::new();
        let mut cursor = 0usize;

        let take_expected = |expected: &[TraceEvent],
                             cursor: &mut usize,
                             out: &mut Vec<LogRecord>|
         -> std::result::Result<Vec<TraceEvent>, String> {
            for (i, e) in expected.iter().enumerate() {
                match records.get(*cursor) {
                    Some(r) if &r.event == e => {
                        out.push(r.clone());
                        *cursor += 1;
                    }
                    Some(r) => {
                        return Err(format!(
                            "record {} (`{}`) disagrees with the replayed `{}`",
                            r.seq,
                            r.event.kind(),
                            e.kind()
                        ))
                    }
                    None => return Ok(expected[i..].to_vec()),
                }
            }
            Ok(Vec::new())
        };

        let missing = take_expected(&initial, &mut cursor, &mut session_records).map_err(corrupt)?;
        let mut repaired = !missing.is_empty();
        if repaired {
            session_records.extend(log.append(&missing, now)?);
        }
        let mut responses = Vec::new();
        while cursor < records.len() {
            if repaired {
                return Err(corrupt("records follow an incomplete batch".into()));
            }
            let rec = &records[cursor];
            let outcomes = match &rec.event {
                TraceEvent::OutcomesRecorded { outcomes, .. } => outcomes.clone(),
                other => {
                    return Err(corrupt(format!(
                        "record {} is `{}` where outcomes were expected",
                        rec.seq,
                        other.kind()
                    )))
                }
            };
            let seq = engine.pending().map(|p| p.cohort_index).unwrap_or(responses.len());
            let batch_start = session_records.len();
            let events = engine
                .record_cohort(&outcomes)
                .map_err(|e| corrupt(format!("record {}: {e}", rec.seq)))?;
            let missing =
                take_expected(&events, &mut cursor, &mut session_records).map_err(corrupt)?;
            if !missing.is_empty() {
                repaired = true;
                session_records.extend(log.append(&missing, now)?);
            }
            let batch = session_records[batch_start..].to_vec();
            responses.push(Self::response(&id, &engine, &session_records, seq, batch, log.path()));
        }
        if repaired {
            tracing::warn!(trial = %id, "regenerated events missing after a crash");
        }
        Ok(Some(Self {
            id,
            engine,
            log,
            records: session_records,
            responses,
            prior_fit,
        }))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn engine(&self) -> &TrialEngine {
        &self.engine
    }

    /// Records the pending cohort. `seq` is the cohort index the client is
    /// answering; an already recorded `seq` with the same outcomes returns the
    /// stored response unchanged.
    pub fn record_cohort(
        &mut self,
        seq: usize,
        outcomes: &[CohortOutcome],
        now: DateTime<Utc>,
    ) -> Result<CohortResponse> {
        if let Some(prev) = self.responses.get(seq) {
            let logged = prev.events.iter().find_map(|r| match &r.event {
                TraceEvent::OutcomesRecorded { outcomes, .. } => Some(outcomes),
                _ => None,
            });
            return match logged {
                Some(o) if o.as_slice() == outcomes => Ok(prev.clone()),
                _ => Err(ServiceError::SeqConflict(format!(
                    "cohort {seq} was already recorded with different outcomes"
                ))),
            };
        }
        let pending = match self.engine.pending() {
            Some(p) => *p,
            None => {
                return Err(ServiceError::Stopped(format!(
                    "phase {}",
                    phase_name(self.engine.state().phase)
                )))
            }
        };
        if seq != pending.cohort_index {
            return Err(ServiceError::SeqConflict(format!(
                "expected seq {}, got {seq}",
                pending.cohort_index
            )));
        }
        if outcomes.len() != pending.size {
            return Err(ServiceError::InvalidCohort(format!(
                "cohort {seq} needs {} outcomes, got {}",
                pending.size,
                outcomes.len()
            )));
        }
        let mut next = self.engine.clone();
        let events = next.record_cohort(outcomes).map_err(ServiceError::from_core)?;
        let batch = self.log.append(&events, now)?;
        self.engine = next;
        self.records.extend(batch.iter().cloned());
        let response =
            Self::response(&self.id, &self.engine, &self.records, seq, batch, self.log.path());
        self.responses.push(response.clone());
        Ok(response)
    }

    fn response(
        id: &str,
        engine: &TrialEngine,
        records: &[LogRecord],
        seq: usize,
        batch: Vec<LogRecord>,
        path: &Path,
    ) -> CohortResponse {
        let summary = batch.iter().find_map(|r| match &r.event {
            TraceEvent::RefitSummary { summary, .. } => Some(summary.clone()),
            _ => None,
        });
        CohortResponse {
            seq,
            decision: engine
                .last_decision()
                .cloned()
                .expect("engine always holds a decision after a cohort"),
            summary,
            events: batch,
            trial: view(id, engine, records, path),
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            trial: view(&self.id, &self.engine, &self.records, self.log.path()),
            posterior: self.posterior(),
            events: self.records.clone(),
        }
    }

    fn posterior(&self) -> PosteriorView {
        let target = self.engine.config().grid.target();
        let frozen = self.engine.is_stopped();
        match self.engine.last_summary() {
            Some(summary) => PosteriorView {
                prior: false,
                frozen,
                enrolled: self
                    .records
                    .iter()
                    .rev()
                    .find_map(|r| match &r.event {
                        TraceEvent::RefitSummary { enrolled, .. } => Some(*enrolled),
                        _ => None,
                    })
                    .unwrap_or(0),
                target,
                fits: self.engine.last_fits().to_vec(),
                summary: summary.clone(),
            },
            None => PosteriorView {
                prior: true,
                frozen,
                enrolled: 0,
                target,
                fits: self.prior_fit.0.clone(),
                summary: self.prior_fit.1.clone(),
            },
        }
    }
}

fn phase_name(phase: TrialPhase) -> String {
    serde_json::to_value(phase)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

fn view(id: &str, engine: &TrialEngine, records: &[LogRecord], path: &Path) -> TrialView {
    let state = engine.state();
    let config = engine.config();
    let mut allocated = vec![0usize; config.grid.num_levels()];
    for s in &state.subjects {
        allocated[s.dose_level - 1] += 1;
    }
    let created_at = records.first().map(|r| r.timestamp).unwrap_or_default();
    let updated_at = records.last().map(|r| r.timestamp).unwrap_or_default();
    TrialView {
        id: id.to_string(),
        created_at,
        updated_at,
        config: config.clone(),
        seed: engine.seed(),
        k_start: engine.k_start(),
        phase: state.phase,
        enrolled: state.enrolled(),
        allocated,
        safe_levels: (1..=state.l_prime).collect(),
        pending: engine.pending().copied(),
        last_decision: engine.last_decision().cloned(),
        stop: engine.stop().cloned(),
        state: state.clone(),
        event_log_path: path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
    }
}
