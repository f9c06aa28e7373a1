use serde::{Deserialize, Serialize};

use super::{
    final_selection, model_step, next_allocation, startup_step, AllocationDecision,
    DecisionKind, DesignConfig, StopRecord, TraceEvent, TrialPhase, TrialState,
};
use crate::error::{Error, Result};
use crate::inference::{summarize, Integrator, ModelFit, PosteriorSummary};
use crate::model::{LevelCounts, SubjectPhase};
use crate::rng::stream_rng;

/// Model-based decision `k` draws from stream `ALLOCATION_STREAM_BASE + k`
/// of the trial seed. Stream 0 is left for outcome generation.
pub const ALLOCATION_STREAM_BASE: u64 = 1;

/// Observed outcomes of one subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortOutcome {
    pub activity: bool,
    pub safety_issue: bool,
}

/// The cohort the trial is waiting on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortAssignment {
    pub cohort_index: usize,
    pub level: usize,
    pub size: usize,
    pub phase: SubjectPhase,
}

/// Runs one trial cohort by cohort and records what happened.
#[derive(Debug, Clone)]
pub struct TrialEngine {
    config: DesignConfig,
    integrator: Integrator,
    seed: u64,
    k_start: usize,
    state: TrialState,
    pending: Option<CohortAssignment>,
    last_fits: Vec<ModelFit>,
    last_summary: Option<PosteriorSummary>,
    last_decision: Option<AllocationDecision>,
    allocations: u64,
    stop: Option<StopRecord>,
}

impl TrialEngine {
    /// Validates the config and announces the first start-up cohort.
    pub fn new(config: DesignConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let integrator = Integrator::new(&config.prior, config.grid.target(), &config.quadrature)?;
        let k_start = config.startup_cohort_size();
        let state = TrialState::new(&config.grid);
        let pending = Some(CohortAssignment {
            cohort_index: 0,
            level: 1,
            size: k_start,
            phase: SubjectPhase::Startup,
        });
        Ok(Self {
            config,
            integrator,
            seed,
            k_start,
            state,
            pending,
            last_fits: Vec::new(),
            last_summary: None,
            last_decision: Some(AllocationDecision::administer(1)),
            allocations: 0,
            stop: None,
        })
    }

    /// Events describing the freshly created trial.
    pub fn initial_events(&self) -> Vec<TraceEvent> {
        let mut events = vec![TraceEvent::Created {
            config: self.config.clone(),
            seed: self.seed,
            k_start: self.k_start,
        }];
        if let Some(a) = self.pending {
            events.push(TraceEvent::CohortDosed(a));
        }
        events
    }

    pub fn config(&self) -> &DesignConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn k_start(&self) -> usize {
        self.k_start
    }

    pub fn state(&self) -> &TrialState {
        &self.state
    }

    pub fn pending(&self) -> Option<&CohortAssignment> {
        self.pending.as_ref()
    }

    pub fn last_fits(&self) -> &[ModelFit] {
        &self.last_fits
    }

    pub fn last_summary(&self) -> Option<&PosteriorSummary> {
        self.last_summary.as_ref()
    }

    pub fn last_decision(&self) -> Option<&AllocationDecision> {
        self.last_decision.as_ref()
    }

    pub fn stop(&self) -> Option<&StopRecord> {
        self.stop.as_ref()
    }

    pub fn is_stopped(&self) -> bool {
        self.state.phase.is_stopped()
    }

    /// Fit on the data collected so far without touching the trial; with no
    /// data this is the prior predictive summary.
    pub fn current_fit(&self) -> Result<(Vec<ModelFit>, PosteriorSummary)> {
        let counts = LevelCounts::from_subjects(&self.config.grid, &self.state.subjects)?;
        summarize(
            self.config.method,
            &self.config.grid,
            &self.config.prior,
            &counts,
            &self.integrator,
        )
    }

    /// Records the outcomes of the pending cohort and decides what comes next.
    /// On error the engine is left unchanged.
    pub fn record_cohort(&mut self, outcomes: &[CohortOutcome]) -> Result<Vec<TraceEvent>> {
        let assignment = match self.pending {
            Some(a) => a,
            None => {
                return Err(Error::State(format!(
                    "trial is no longer enrolling (phase {:?})",
                    self.state.phase
                )))
            }
        };
        let state = match assignment.phase {
            SubjectPhase::Startup => startup_step(&self.state, &self.config, outcomes)?,
            SubjectPhase::ModelBased => {
                model_step(&self.state, &self.config, assignment.level, outcomes)?
            }
        };
        let mut next = self.clone();
        next.state = state;
        next.pending = None;
        let mut events = vec![TraceEvent::OutcomesRecorded {
            cohort_index: assignment.cohort_index,
            level: assignment.level,
            outcomes: outcomes.to_vec(),
        }];
        next.advance(&mut events)?;
        *self = next;
        Ok(events)
    }

    fn advance(&mut self, events: &mut Vec<TraceEvent>) -> Result<()> {
        match self.state.phase {
            TrialPhase::Startup => {
                let level = self.state.current_startup_level;
                self.announce(AllocationDecision::administer(level), SubjectPhase::Startup, events);
            }
            TrialPhase::StoppedSafetyExhausted => {
                self.finish(AllocationDecision::stop_safety(), events);
            }
            TrialPhase::ModelBased => {
                let (fits, summary) = self.current_fit()?;
                events.push(TraceEvent::RefitSummary {
                    enrolled: self.state.enrolled(),
                    fits: fits.clone(),
                    summary: summary.clone(),
                });
                self.last_fits = fits;
                self.last_summary = Some(summary.clone());
                if self.state.enrolled() + self.config.k_model > self.config.n {
                    let decision = match final_selection(&self.state, &summary, &self.config) {
                        Some(level) => {
                            self.state.phase = TrialPhase::Completed;
                            AllocationDecision {
                                kind: DecisionKind::StopComplete,
                                level: Some(level),
                                rationale: None,
                            }
                        }
                        None => {
                            self.state.phase = TrialPhase::StoppedFutility;
                            AllocationDecision {
                                kind: DecisionKind::StopFutility,
                                level: None,
                                rationale: None,
                            }
                        }
                    };
                    self.finish(decision, events);
                    return Ok(());
                }
                let mut rng = stream_rng(self.seed, ALLOCATION_STREAM_BASE + self.allocations);
                self.allocations += 1;
                let decision = next_allocation(&self.state, &summary, &self.config, &mut rng)?;
                match decision.kind {
                    DecisionKind::Administer => {
                        self.announce(decision, SubjectPhase::ModelBased, events)
                    }
                    _ => {
                        self.state.phase = TrialPhase::StoppedFutility;
                        self.finish(decision, events);
                    }
                }
            }
            TrialPhase::StoppedFutility | TrialPhase::Completed => {
                return Err(Error::State("trial already stopped".into()));
            }
        }
        Ok(())
    }

    fn announce(
        &mut self,
        decision: AllocationDecision,
        phase: SubjectPhase,
        events: &mut Vec<TraceEvent>,
    ) {
        let level = decision.level.expect("administer decision carries a level");
        let size = match phase {
            SubjectPhase::Startup => self.k_start,
            SubjectPhase::ModelBased => self.config.k_model,
        };
        let assignment = CohortAssignment {
            cohort_index: self.state.cohorts,
            level,
            size,
            phase,
        };
        events.push(TraceEvent::Decision(decision.clone()));
        events.push(TraceEvent::CohortDosed(assignment));
        self.last_decision = Some(decision);
        self.pending = Some(assignment);
    }

    fn finish(&mut self, decision: AllocationDecision, events: &mut Vec<TraceEvent>) {
        let final_selection = match decision.kind {
            DecisionKind::StopComplete => decision.level,
            _ => None,
        };
        let record = StopRecord {
            phase: self.state.phase,
            final_selection,
            enrolled: self.state.enrolled(),
        };
        events.push(TraceEvent::Decision(decision.clone()));
        events.push(TraceEvent::Stop(record.clone()));
        self.last_decision = Some(decision);
        self.stop = Some(record);
        self.pending = None;
    }
}
