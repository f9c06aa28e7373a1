//! Trial rules: start-up escalation, admissibility, allocation and stopping.
//!
//! The functions here are pure. [`TrialEngine`] strings them together into
//! the state machine that the simulator and the service both drive.

mod engine;
mod trace;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use engine::{CohortAssignment, CohortOutcome, TrialEngine, ALLOCATION_STREAM_BASE};
pub use trace::{StopRecord, TraceEvent};

use crate::error::{Error, Result};
use crate::inference::{PosteriorSummary, QuadratureConfig, TIE_EPS};
use crate::inference::Method;
use crate::model::{default_prior, DoseGrid, PriorSpec, SubjectPhase, SubjectRecord};

pub const DEFAULT_C_F: f64 = 0.05;
pub const DEFAULT_S_BASE: f64 = 0.05;
pub const DEFAULT_K_MODEL: usize = 2;

/// Everything needed to run one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DesignConfigDoc")]
pub struct DesignConfig {
    pub method: Method,
    /// Maximum number of subjects.
    pub n: usize,
    /// Cohort size in the model-based phase.
    pub k_model: usize,
    /// Futility threshold on `P(phi_l > target)`.
    pub c_f: f64,
    /// Randomization width at zero enrollment.
    pub s_base: f64,
    pub grid: DoseGrid,
    pub prior: PriorSpec,
    pub quadrature: QuadratureConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignConfigDoc {
    method: Method,
    n: usize,
    #[serde(default = "default_k_model")]
    k_model: usize,
    #[serde(default = "default_c_f")]
    c_f: f64,
    #[serde(default = "default_s_base")]
    s_base: f64,
    grid: DoseGrid,
    #[serde(default)]
    prior: Option<PriorSpec>,
    #[serde(default)]
    quadrature: QuadratureConfig,
}

fn default_k_model() -> usize {
    DEFAULT_K_MODEL
}
fn default_c_f() -> f64 {
    DEFAULT_C_F
}
fn default_s_base() -> f64 {
    DEFAULT_S_BASE
}

impl TryFrom<DesignConfigDoc> for DesignConfig {
    type Error = Error;

    fn try_from(d: DesignConfigDoc) -> Result<Self> {
        let prior = match d.prior {
            Some(p) => p,
            None => default_prior(&d.grid)?,
        };
        let cfg = DesignConfig {
            method: d.method,
            n: d.n,
            k_model: d.k_model,
            c_f: d.c_f,
            s_base: d.s_base,
            grid: d.grid,
            prior,
            quadrature: d.quadrature,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl DesignConfig {
    /// Built-in grid for `num_levels` with the default prior and thresholds.
    pub fn standard(method: Method, num_levels: usize, n: usize) -> Result<Self> {
        let grid = DoseGrid::standard(num_levels)?;
        let prior = default_prior(&grid)?;
        let cfg = DesignConfig {
            method,
            n,
            k_model: DEFAULT_K_MODEL,
            c_f: DEFAULT_C_F,
            s_base: DEFAULT_S_BASE,
            grid,
            prior,
            quadrature: QuadratureConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.grid.num_levels();
        if self.n % 2 != 0 {
            return Err(Error::config("n", format!("sample size must be even, got {}", self.n)));
        }
        if self.n < 2 * l {
            return Err(Error::config(
                "n",
                format!("sample size must be at least {} for {l} levels", 2 * l),
            ));
        }
        if self.k_model == 0 {
            return Err(Error::config("k_model", "cohort size must be at least 1"));
        }
        if !(self.c_f > 0.0 && self.c_f < 1.0) {
            return Err(Error::config("c_f", "futility threshold must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.s_base) {
            return Err(Error::config("s_base", "randomization width must lie in [0, 1)"));
        }
        self.prior.validate_for(&self.grid)?;
        self.quadrature.validate()?;
        startup_cohort_size(self.n, l, self.k_model)?;
        Ok(())
    }

    pub fn startup_cohort_size(&self) -> usize {
        startup_cohort_size(self.n, self.grid.num_levels(), self.k_model)
            .expect("validated configuration")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| doc_error(e.message().to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| doc_error(e.to_string()))
    }

    /// Reads a `.json` or `.toml` document (anything else is parsed as TOML).
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("path", format!("{}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

// Validation errors raised inside `try_from` come back as text; recover the
// field name where possible so callers still get one.
fn doc_error(message: String) -> Error {
    let field = message
        .split('`')
        .nth(1)
        .filter(|_| message.starts_with("invalid configuration"))
        .unwrap_or("document")
        .to_string();
    Error::Config { field, message }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialPhase {
    Startup,
    ModelBased,
    StoppedFutility,
    StoppedSafetyExhausted,
    Completed,
}

impl TrialPhase {
    pub fn is_stopped(&self) -> bool {
        !matches!(self, TrialPhase::Startup | TrialPhase::ModelBased)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialState {
    pub subjects: Vec<SubjectRecord>,
    pub phase: TrialPhase,
    /// Highest level without an observed safety issue; 0 once all are gone.
    pub l_prime: usize,
    pub current_startup_level: usize,
    /// Number of cohorts dosed so far.
    pub cohorts: usize,
}

impl TrialState {
    pub fn new(grid: &DoseGrid) -> Self {
        Self {
            subjects: Vec::new(),
            phase: TrialPhase::Startup,
            l_prime: grid.num_levels(),
            current_startup_level: 1,
            cohorts: 0,
        }
    }

    /// Current enrollment.
    pub fn enrolled(&self) -> usize {
        self.subjects.len()
    }

    fn push_cohort(&mut self, level: usize, outcomes: &[CohortOutcome], phase: SubjectPhase) {
        let cohort_index = self.cohorts;
        self.subjects.extend(outcomes.iter().map(|o| SubjectRecord {
            dose_level: level,
            activity: o.activity,
            safety_issue: o.safety_issue,
            cohort_index,
            phase,
        }));
        self.cohorts += 1;
    }
}

/// Start-up cohort size: `floor(n/L - K_model)`, rounded down to even when
/// `L` is odd and does not divide `n`.
pub fn startup_cohort_size(n: usize, num_levels: usize, k_model: usize) -> Result<usize> {
    if n % 2 != 0 {
        return Err(Error::config("n", format!("sample size must be even, got {n}")));
    }
    if num_levels == 0 {
        return Err(Error::config("levels", "at least one level required"));
    }
    let base = (n / num_levels).checked_sub(k_model).unwrap_or(0);
    // floor(n/L - K) == floor(n/L) - K for integer K
    let k = if n % num_levels == 0 || num_levels % 2 == 0 {
        base
    } else {
        2 * (base / 2)
    };
    if k < 1 {
        return Err(Error::config(
            "n",
            format!("n={n} leaves no start-up cohort for {num_levels} levels and K_model={k_model}"),
        ));
    }
    Ok(k)
}

fn check_cohort(outcomes: &[CohortOutcome], expected: usize) -> Result<()> {
    if outcomes.len() != expected {
        return Err(Error::Domain(format!(
            "cohort has {} outcomes, expected {expected}",
            outcomes.len()
        )));
    }
    Ok(())
}

/// Records a start-up cohort dosed at the current start-up level.
pub fn startup_step(
    state: &TrialState,
    config: &DesignConfig,
    outcomes: &[CohortOutcome],
) -> Result<TrialState> {
    if state.phase != TrialPhase::Startup {
        return Err(Error::State(format!(
            "start-up step in phase {:?}",
            state.phase
        )));
    }
    check_cohort(outcomes, config.startup_cohort_size())?;
    let level = state.current_startup_level;
    let mut next = state.clone();
    next.push_cohort(level, outcomes, SubjectPhase::Startup);
    if outcomes.iter().any(|o| o.safety_issue) {
        next.l_prime = level - 1;
        next.phase = if next.l_prime == 0 {
            TrialPhase::StoppedSafetyExhausted
        } else {
            TrialPhase::ModelBased
        };
    } else if level == config.grid.num_levels() {
        next.phase = TrialPhase::ModelBased;
    } else {
        next.current_startup_level = level + 1;
    }
    Ok(next)
}

/// Records a model-based cohort. A safety issue removes its level and
/// everything above it.
pub fn model_step(
    state: &TrialState,
    config: &DesignConfig,
    level: usize,
    outcomes: &[CohortOutcome],
) -> Result<TrialState> {
    if state.phase != TrialPhase::ModelBased {
        return Err(Error::State(format!(
            "model-based step in phase {:?}",
            state.phase
        )));
    }
    if level == 0 || level > state.l_prime {
        return Err(Error::State(format!(
            "level {level} is above the safety limit {}",
            state.l_prime
        )));
    }
    check_cohort(outcomes, config.k_model)?;
    if state.enrolled() + config.k_model > config.n {
        return Err(Error::State("sample size budget exhausted".into()));
    }
    let mut next = state.clone();
    next.push_cohort(level, outcomes, SubjectPhase::ModelBased);
    if outcomes.iter().any(|o| o.safety_issue) {
        next.l_prime = next.l_prime.min(level - 1);
        if next.l_prime == 0 {
            next.phase = TrialPhase::StoppedSafetyExhausted;
        }
    }
    Ok(next)
}

/// Levels not above `l_prime` whose exceedance probability reaches `c_f`.
pub fn admissible_set(summary: &PosteriorSummary, l_prime: usize, c_f: f64) -> Vec<usize> {
    summary
        .exceed
        .iter()
        .take(l_prime)
        .enumerate()
        .filter(|(_, e)| **e >= c_f)
        .map(|(i, _)| i + 1)
        .collect()
}

/// Level in `candidates` whose estimate is closest to `target`, lowest on ties.
fn closest_to_target(phi: &[f64], target: f64, candidates: &[usize]) -> Option<usize> {
    let best = candidates
        .iter()
        .map(|&l| (phi[l - 1] - target).abs())
        .fold(f64::INFINITY, f64::min);
    candidates
        .iter()
        .copied()
        .find(|&l| (phi[l - 1] - target).abs() - best <= TIE_EPS)
}

/// Estimated minimum active dose over the whole grid.
pub fn estimate_mad(summary: &PosteriorSummary, target: f64) -> usize {
    let all: Vec<usize> = (1..=summary.phi.len()).collect();
    closest_to_target(&summary.phi, target, &all).unwrap_or(1)
}

/// Member of `set` nearest to `level`, the lower one when two are equidistant.
fn nearest_in(set: &[usize], level: usize) -> Option<usize> {
    set.iter().copied().min_by_key(|&l| (l.abs_diff(level), l))
}

/// Plateau levels within `s` of the most probable one, with renormalized weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationSet {
    pub width: f64,
    pub levels: Vec<usize>,
    pub weights: Vec<f64>,
}

impl RandomizationSet {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (l, w) in self.levels.iter().zip(&self.weights) {
            acc += w;
            if u < acc {
                return *l;
            }
        }
        *self.levels.last().expect("non-empty randomization set")
    }
}

/// `s = s_base (1 - N/n)` and the levels whose posterior probability is
/// within `s` of the maximum.
pub fn randomization_set(pi: &[f64], enrolled: usize, n: usize, s_base: f64) -> RandomizationSet {
    let width = s_base * (1.0 - enrolled as f64 / n as f64);
    let top = pi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let levels: Vec<usize> = pi
        .iter()
        .enumerate()
        .filter(|(_, p)| top - **p <= width + TIE_EPS)
        .map(|(i, _)| i + 1)
        .collect();
    let total: f64 = levels.iter().map(|l| pi[l - 1]).sum();
    let weights = levels.iter().map(|l| pi[l - 1] / total).collect();
    RandomizationSet {
        width,
        levels,
        weights,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Administer,
    StopFutility,
    StopComplete,
    /// Every level has been removed for safety.
    StopSafety,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationRoute {
    /// Plateau estimated above the MAD estimate: go to the admissible level nearest to it.
    NearestToMad,
    /// Drawn from the randomization set and admissible.
    Randomized,
    /// Drawn level was not admissible; replaced by the nearest admissible one.
    Fallback,
}

/// Intermediate quantities behind a model-based decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rationale {
    pub tau_hat: usize,
    pub mad_hat: usize,
    pub l_prime: usize,
    pub admissible: Vec<usize>,
    pub randomization: Option<RandomizationSet>,
    pub drawn: Option<usize>,
    pub route: Option<AllocationRoute>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationDecision {
    pub kind: DecisionKind,
    /// Level to administer, or the selected level for a completed trial.
    pub level: Option<usize>,
    pub rationale: Option<Rationale>,
}

impl AllocationDecision {
    pub fn administer(level: usize) -> Self {
        Self {
            kind: DecisionKind::Administer,
            level: Some(level),
            rationale: None,
        }
    }

    pub fn stop_safety() -> Self {
        Self {
            kind: DecisionKind::StopSafety,
            level: None,
            rationale: None,
        }
    }
}

/// Chooses the level for the next model-based cohort, or stops for futility.
pub fn next_allocation<R: Rng + ?Sized>(
    state: &TrialState,
    summary: &PosteriorSummary,
    config: &DesignConfig,
    rng: &mut R,
) -> Result<AllocationDecision> {
    if state.phase != TrialPhase::ModelBased {
        return Err(Error::State(format!("allocation in phase {:?}", state.phase)));
    }
    if state.enrolled() + config.k_model > config.n {
        return Err(Error::State("sample size budget exhausted".into()));
    }
    let target = config.grid.target();
    let admissible = admissible_set(summary, state.l_prime, config.c_f);
    let mad_hat = estimate_mad(summary, target);
    let mut rationale = Rationale {
        tau_hat: summary.tau_hat,
        mad_hat,
        l_prime: state.l_prime,
        admissible,
        randomization: None,
        drawn: None,
        route: None,
    };
    if rationale.admissible.is_empty() {
        return Ok(AllocationDecision {
            kind: DecisionKind::StopFutility,
            level: None,
            rationale: Some(rationale),
        });
    }
    let level = if summary.tau_hat > mad_hat {
        rationale.route = Some(AllocationRoute::NearestToMad);
        nearest_in(&rationale.admissible, mad_hat)
    } else {
        let set = randomization_set(&summary.pi, state.enrolled(), config.n, config.s_base);
        let drawn = set.draw(rng);
        rationale.randomization = Some(set);
        rationale.drawn = Some(drawn);
        if rationale.admissible.contains(&drawn) {
            rationale.route = Some(AllocationRoute::Randomized);
            Some(drawn)
        } else {
            rationale.route = Some(AllocationRoute::Fallback);
            nearest_in(&rationale.admissible, drawn)
        }
    };
    Ok(AllocationDecision {
        kind: DecisionKind::Administer,
        level,
        rationale: Some(rationale),
    })
}

/// Recommended dose at the end of the trial: the admissible level whose
/// estimate is closest to the target, or none if nothing is admissible.
pub fn final_selection(
    state: &TrialState,
    summary: &PosteriorSummary,
    config: &DesignConfig,
) -> Option<usize> {
    let admissible = admissible_set(summary, state.l_prime, config.c_f);
    closest_to_target(&summary.phi, config.grid.target(), &admissible)
}
