//! Simulated trials under known activity and safety rates.

pub mod report;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{CohortOutcome, DesignConfig, TraceEvent, TrialEngine, TrialPhase};
use crate::error::{Error, Result};
use crate::inference::Method;
use crate::rng::{mix_seed, stream_rng};

/// Stream of the trial seed that feeds outcome generation.
pub const OUTCOME_STREAM: u64 = 0;

/// True per-level activity and safety-issue probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    /// Level that a perfect design would select, if any.
    #[serde(default)]
    pub mad_truth: Option<usize>,
}

impl Scenario {
    /// Checks the scenario against a grid size. Returns advisory warnings.
    pub fn validate(&self, num_levels: usize) -> Result<Vec<String>> {
        if self.phi.len() != num_levels || self.psi.len() != num_levels {
            return Err(Error::config(
                "phi",
                format!(
                    "scenario `{}` has {}/{} rates for {num_levels} levels",
                    self.name,
                    self.phi.len(),
                    self.psi.len()
                ),
            ));
        }
        let unit = |v: &[f64]| v.iter().all(|p| (0.0..=1.0).contains(p));
        if !unit(&self.phi) {
            return Err(Error::config("phi", "activity rates must lie in [0, 1]"));
        }
        if !unit(&self.psi) {
            return Err(Error::config("psi", "safety-issue rates must lie in [0, 1]"));
        }
        if let Some(m) = self.mad_truth {
            if !(1..=num_levels).contains(&m) {
                return Err(Error::config("mad_truth", format!("level {m} is off the grid")));
            }
        }
        let mut warnings = Vec::new();
        if self.psi.windows(2).any(|w| w[1] < w[0]) {
            warnings.push(format!(
                "scenario `{}`: safety-issue rates decrease with dose",
                self.name
            ));
        }
        Ok(warnings)
    }
}

/// Scenario files hold a list under `scenario`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    scenario: Vec<Scenario>,
}

/// Parses `[[scenario]]` tables from TOML, or a JSON array.
pub fn parse_scenarios(text: &str, json: bool) -> Result<Vec<Scenario>> {
    let list = if json {
        serde_json::from_str::<Vec<Scenario>>(text).map_err(|e| Error::config("scenario", e.to_string()))?
    } else {
        toml::from_str::<ScenarioFile>(text)
            .map_err(|e| Error::config("scenario", e.message().to_string()))?
            .scenario
    };
    if list.is_empty() {
        return Err(Error::config("scenario", "no scenarios defined"));
    }
    Ok(list)
}

/// The eight simulation scenarios for grids of 3, 4 or 5 levels.
pub fn builtin_scenarios(num_levels: usize) -> Result<Vec<Scenario>> {
    let (psi, rows): (Vec<f64>, [(Vec<f64>, Option<usize>); 8]) = match num_levels {
        3 => (
            vec![0.0005, 0.001, 0.002],
            [
                (vec![0.5, 0.65, 0.8], Some(1)),
                (vec![0.2, 0.35, 0.5], Some(3)),
                (vec![0.05, 0.2, 0.35], None),
                (vec![0.35, 0.5, 0.65], Some(2)),
                (vec![0.35, 0.5, 0.5], Some(2)),
                (vec![0.5, 0.5, 0.5], Some(1)),
                (vec![0.35, 0.35, 0.35], None),
                (vec![0.65, 0.65, 0.65], Some(1)),
            ],
        ),
        4 => (
            vec![0.0, 0.0005, 0.001, 0.002],
            [
                (vec![0.35, 0.5, 0.65, 0.8], Some(2)),
                (vec![0.05, 0.2, 0.35, 0.5], Some(4)),
                (vec![0.01, 0.05, 0.2, 0.35], None),
                (vec![0.2, 0.35, 0.5, 0.65], Some(3)),
                (vec![0.2, 0.35, 0.5, 0.5], Some(3)),
                (vec![0.35, 0.5, 0.5, 0.5], Some(2)),
                (vec![0.2, 0.35, 0.35, 0.35], None),
                (vec![0.5, 0.65, 0.65, 0.65], Some(1)),
            ],
        ),
        5 => (
            vec![0.0, 0.0005, 0.001, 0.002, 0.004],
            [
                (vec![0.35, 0.5, 0.65, 0.8, 0.95], Some(2)),
                (vec![0.05, 0.2, 0.35, 0.5, 0.65], Some(4)),
                (vec![0.01, 0.05, 0.15, 0.25, 0.35], None),
                (vec![0.2, 0.35, 0.5, 0.65, 0.8], Some(3)),
                (vec![0.05, 0.2, 0.35, 0.5, 0.5], Some(4)),
                (vec![0.35, 0.5, 0.5, 0.5, 0.5], Some(2)),
                (vec![0.2, 0.35, 0.35, 0.35, 0.35], None),
                (vec![0.5, 0.65, 0.65, 0.65, 0.65], Some(1)),
            ],
        ),
        other => {
            return Err(Error::config(
                "levels",
                format!("built-in scenarios exist for L in {{3, 4, 5}}, got {other}"),
            ))
        }
    };
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, (phi, mad_truth))| Scenario {
            name: format!("{}", i + 1),
            phi,
            psi: psi.clone(),
            mad_truth,
        })
        .collect())
}

/// Outcome of one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub final_selection: Option<usize>,
    /// Subjects dosed at each level.
    pub allocated: Vec<u32>,
    pub enrolled: usize,
    pub phase: TrialPhase,
    pub trace: Vec<TraceEvent>,
}

impl TrialResult {
    pub fn terminated_early(&self) -> bool {
        self.final_selection.is_none()
    }
}

/// Seed of replicate `index` under `master_seed`.
pub fn replicate_seed(master_seed: u64, index: u64) -> u64 {
    mix_seed(master_seed, index)
}

/// Runs one trial. Each subject draws activity and then safety from stream
/// [`OUTCOME_STREAM`] of `seed`; allocation randomness uses other streams of
/// the same seed.
pub fn simulate_trial(scenario: &Scenario, config: &DesignConfig, seed: u64) -> Result<TrialResult> {
    let num_levels = config.grid.num_levels();
    scenario.validate(num_levels)?;
    let mut outcomes_rng = stream_rng(seed, OUTCOME_STREAM);
    let mut engine = TrialEngine::new(config.clone(), seed)?;
    let mut trace = engine.initial_events();
    while let Some(a) = engine.pending().copied() {
        let (phi, psi) = (scenario.phi[a.level - 1], scenario.psi[a.level - 1]);
        let outcomes: Vec<CohortOutcome> = (0..a.size)
            .map(|_| {
                let activity = outcomes_rng.random::<f64>() < phi;
                let safety_issue = outcomes_rng.random::<f64>() < psi;
                CohortOutcome {
                    activity,
                    safety_issue,
                }
            })
            .collect();
        trace.extend(engine.record_cohort(&outcomes)?);
    }
    let mut allocated = vec![0u32; num_levels];
    for s in &engine.state().subjects {
        allocated[s.dose_level - 1] += 1;
    }
    Ok(TrialResult {
        seed,
        final_selection: engine.stop().and_then(|s| s.final_selection),
        allocated,
        enrolled: engine.state().enrolled(),
        phase: engine.state().phase,
        trace,
    })
}

/// Per-replicate record kept for plotting; the trace is dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub index: usize,
    pub seed: u64,
    pub final_selection: Option<usize>,
    pub allocated: Vec<u32>,
    pub enrolled: usize,
    pub phase: TrialPhase,
}

/// Replicate-averaged behaviour of the design in one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub scenario: String,
    pub method: Method,
    pub num_levels: usize,
    pub n: usize,
    /// Percentage of replicates selecting each level.
    pub sel_pct: Vec<f64>,
    /// Mean subjects per level over all replicates, early stops included.
    pub mean_n: Vec<f64>,
    pub early_term_pct: f64,
    pub total_mean: f64,
    pub total_sd: f64,
    pub reps: usize,
    pub seed: u64,
}

impl OperatingCharacteristics {
    pub fn from_replicates(
        scenario: &Scenario,
        config: &DesignConfig,
        master_seed: u64,
        replicates: &[ReplicateSummary],
    ) -> Self {
        let l = config.grid.num_levels();
        let reps = replicates.len();
        let r = reps as f64;
        let mut selected = vec![0usize; l];
        let mut allocated = vec![0u64; l];
        let mut early = 0usize;
        for rep in replicates {
            match rep.final_selection {
                Some(level) => selected[level - 1] += 1,
                None => early += 1,
            }
            for (acc, a) in allocated.iter_mut().zip(&rep.allocated) {
                *acc += u64::from(*a);
            }
        }
        let totals: Vec<f64> = replicates.iter().map(|x| x.enrolled as f64).collect();
        let total_mean = totals.iter().sum::<f64>() / r;
        let total_sd = if reps > 1 {
            (totals.iter().map(|t| (t - total_mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            scenario: scenario.name.clone(),
            method: config.method,
            num_levels: l,
            n: config.n,
            sel_pct: selected.iter().map(|c| 100.0 * *c as f64 / r).collect(),
            mean_n: allocated.iter().map(|a| *a as f64 / r).collect(),
            early_term_pct: 100.0 * early as f64 / r,
            total_mean,
            total_sd,
            reps,
            seed: master_seed,
        }
    }
}

/// Runs `reps` replicates on `workers` threads (the global pool when `None`).
/// The result does not depend on the number of workers.
pub fn run_replicates(
    scenario: &Scenario,
    config: &DesignConfig,
    reps: usize,
    master_seed: u64,
    workers: Option<usize>,
) -> Result<Vec<ReplicateSummary>> {
    if reps == 0 {
        return Err(Error::config("reps", "at least one replicate required"));
    }
    scenario.validate(config.grid.num_levels())?;
    config.validate()?;
    let one = |index: usize| -> Result<ReplicateSummary> {
        let seed = replicate_seed(master_seed, index as u64);
        let t = simulate_trial(scenario, config, seed).map_err(|e| Error::Replicate {
            index,
            seed,
            source: Box::new(e),
        })?;
        Ok(ReplicateSummary {
            index,
            seed,
            final_selection: t.final_selection,
            allocated: t.allocated,
            enrolled: t.enrolled,
            phase: t.phase,
        })
    };
    let run = || (0..reps).into_par_iter().map(one).collect::<Result<Vec<_>>>();
    match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::config("workers", e.to_string()))?
            .install(run),
        None => run(),
    }
}

pub fn run_operating_characteristics(
    scenario: &Scenario,
    config: &DesignConfig,
    reps: usize,
    master_seed: u64,
    workers: Option<usize>,
) -> Result<OperatingCharacteristics> {
    let replicates = run_replicates(scenario, config, reps, master_seed, workers)?;
    Ok(OperatingCharacteristics::from_replicates(
        scenario,
        config,
        master_seed,
        &replicates,
    ))
}

#[cfg(test)]
mod tests;
