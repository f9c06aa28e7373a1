//! Trial trace events.
//!
//! One event per line when written out. The `kind` tag and the payload field
//! names are part of the service's storage format, so treat them as stable.

use serde::{Deserialize, Serialize};

use super::{AllocationDecision, CohortAssignment, CohortOutcome, DesignConfig, TrialPhase};
use crate::inference::{ModelFit, PosteriorSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopRecord {
    pub phase: TrialPhase,
    pub final_selection: Option<usize>,
    pub enrolled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum TraceEvent {
    Created {
        config: DesignConfig,
        seed: u64,
        k_start: usize,
    },
    CohortDosed(CohortAssignment),
    OutcomesRecorded {
        cohort_index: usize,
        level: usize,
        outcomes: Vec<CohortOutcome>,
    },
    RefitSummary {
        enrolled: usize,
        fits: Vec<ModelFit>,
        summary: PosteriorSummary,
    },
    Decision(AllocationDecision),
    Stop(StopRecord),
}

impl TraceEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            TraceEvent::Created { .. } => "created",
            TraceEvent::CohortDosed(_) => "cohort_dosed",
            TraceEvent::OutcomesRecorded { .. } => "outcomes_recorded",
            TraceEvent::RefitSummary { .. } => "refit_summary",
            TraceEvent::Decision(_) => "decision",
            TraceEvent::Stop(_) => "stop",
        }
    }
}
