//! Dose-activity model family with an activity plateau.
//!
//! Model `tau` puts the logit of the activity probability at level `l` at
//! `gamma0 + gamma1 * log(d_l / d_ref)` below the plateau and freezes it at
//! `gamma0 + gamma1 * log(d_tau / d_ref)` from level `tau` upward. The model
//! with `tau = 1` is flat (`gamma0` only) and the one with `tau = L` is the
//! plain logistic regression on log-dose, at least on the grid.
//!
//! Dose levels are 1-based everywhere in the public API.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{expit, logit, softplus};

pub const MIN_LEVELS: usize = 2;
pub const MAX_LEVELS: usize = 8;

/// Ordered dose set with the reference dose, target activity rate and the
/// initial guesses used to build the slope prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DoseGridDoc")]
pub struct DoseGrid {
    levels: Vec<f64>,
    ref_level: usize,
    target: f64,
    initial_guesses: Vec<f64>,
}

/// Wire form of [`DoseGrid`]; `levels` defaults to `1..=L` and `ref_level`
/// to the lowest level whose initial guess is closest to the target.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DoseGridDoc {
    #[serde(default)]
    levels: Option<Vec<f64>>,
    #[serde(default)]
    ref_level: Option<usize>,
    target: f64,
    initial_guesses: Vec<f64>,
}

impl TryFrom<DoseGridDoc> for DoseGrid {
    type Error = Error;

    fn try_from(doc: DoseGridDoc) -> Result<Self> {
        let levels = doc
            .levels
            .unwrap_or_else(|| (1..=doc.initial_guesses.len()).map(|l| l as f64).collect());
        let ref_level = match doc.ref_level {
            Some(r) => r,
            None => default_ref_level(&doc.initial_guesses, doc.target),
        };
        DoseGrid::new(levels, ref_level, doc.target, doc.initial_guesses)
    }
}

fn default_ref_level(guesses: &[f64], target: f64) -> usize {
    let mut best = 1;
    let mut best_gap = f64::INFINITY;
    for (i, g) in guesses.iter().enumerate() {
        let gap = (g - target).abs();
        if gap < best_gap - 1e-12 {
            best = i + 1;
            best_gap = gap;
        }
    }
    best
}

impl DoseGrid {
    pub fn new(
        levels: Vec<f64>,
        ref_level: usize,
        target: f64,
        initial_guesses: Vec<f64>,
    ) -> Result<Self> {
        let l = levels.len();
        if !(MIN_LEVELS..=MAX_LEVELS).contains(&l) {
            return Err(Error::config(
                "levels",
                format!("between {MIN_LEVELS} and {MAX_LEVELS} dose levels required, got {l}"),
            ));
        }
        if levels.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::config("levels", "dose values must be finite and positive"));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("levels", "dose values must be strictly increasing"));
        }
        if initial_guesses.len() != l {
            return Err(Error::config(
                "initial_guesses",
                format!("expected {l} initial guesses, got {}", initial_guesses.len()),
            ));
        }
        if initial_guesses.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::config("initial_guesses", "guesses must lie in (0, 1)"));
        }
        if initial_guesses.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("initial_guesses", "guesses must be strictly increasing"));
        }
        if !(target > 0.0 && target < 1.0) {
            return Err(Error::config("target", "target activity rate must lie in (0, 1)"));
        }
        if !(1..=l).contains(&ref_level) {
            return Err(Error::config("ref_level", format!("must be in 1..={l}")));
        }
        Ok(Self {
            levels,
            ref_level,
            target,
            initial_guesses,
        })
    }

    /// Grid with dose values `1..=L` and the default reference level.
    pub fn with_guesses(initial_guesses: Vec<f64>, target: f64) -> Result<Self> {
        let levels = (1..=initial_guesses.len()).map(|l| l as f64).collect();
        let ref_level = default_ref_level(&initial_guesses, target);
        Self::new(levels, ref_level, target, initial_guesses)
    }

    /// The simulation-study grids for 3, 4 or 5 levels with a target of 0.5.
    pub fn standard(num_levels: usize) -> Result<Self> {
        let guesses = match num_levels {
            3 => vec![0.5, 0.65, 0.8],
            4 => vec![0.35, 0.5, 0.65, 0.8],
            5 => vec![0.35, 0.5, 0.65, 0.8, 0.95],
            other => {
                return Err(Error::config(
                    "levels",
                    format!("built-in grids exist for L in {{3, 4, 5}}, got {other}"),
                ))
            }
        };
        Self::with_guesses(guesses, 0.5)
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn dose(&self, level: usize) -> f64 {
        self.levels[level - 1]
    }

    pub fn ref_level(&self) -> usize {
        self.ref_level
    }

    pub fn ref_dose(&self) -> f64 {
        self.dose(self.ref_level)
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn initial_guesses(&self) -> &[f64] {
        &self.initial_guesses
    }

    pub fn check_level(&self, level: usize) -> Result<()> {
        if (1..=self.num_levels()).contains(&level) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "dose level {level} outside 1..={}",
                self.num_levels()
            )))
        }
    }
}

/// Intercept and (strictly positive) slope of the logistic dose-activity curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub gamma0: f64,
    pub gamma1: f64,
}

impl ParamPoint {
    pub fn new(gamma0: f64, gamma1: f64) -> Result<Self> {
        if !gamma0.is_finite() {
            return Err(Error::Domain("gamma0 must be finite".into()));
        }
        if !(gamma1 > 0.0 && gamma1.is_finite()) {
            return Err(Error::Domain("gamma1 must be finite and > 0".into()));
        }
        Ok(Self { gamma0, gamma1 })
    }
}

/// The model whose dose-activity curve becomes flat at level `tau`.
#[derive(Debug, Clone, Copy)]
pub struct PlateauModel<'g> {
    tau: usize,
    grid: &'g DoseGrid,
}

impl<'g> PlateauModel<'g> {
    pub fn new(tau: usize, grid: &'g DoseGrid) -> Result<Self> {
        if !(1..=grid.num_levels()).contains(&tau) {
            return Err(Error::Domain(format!(
                "plateau level {tau} outside 1..={}",
                grid.num_levels()
            )));
        }
        Ok(Self { tau, grid })
    }

    /// All `L` models of a grid, ordered by plateau level.
    pub fn family(grid: &'g DoseGrid) -> Vec<Self> {
        (1..=grid.num_levels()).map(|tau| Self { tau, grid }).collect()
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn grid(&self) -> &'g DoseGrid {
        self.grid
    }

    /// Multiplier of `gamma1` in the logit at `level`.
    pub fn covariate(&self, level: usize) -> Result<f64> {
        self.grid.check_level(level)?;
        Ok(self.covariate_unchecked(level))
    }

    pub(crate) fn covariate_unchecked(&self, level: usize) -> f64 {
        if self.tau == 1 {
            return 0.0;
        }
        let effective = level.min(self.tau);
        (self.grid.dose(effective) / self.grid.ref_dose()).ln()
    }

    /// Covariates for every level of the grid.
    pub fn covariates(&self) -> Vec<f64> {
        (1..=self.grid.num_levels())
            .map(|l| self.covariate_unchecked(l))
            .collect()
    }

    pub fn link_logit(&self, p: &ParamPoint, level: usize) -> Result<f64> {
        let c = self.covariate(level)?;
        if self.tau == 1 {
            Ok(p.gamma0)
        } else {
            Ok(p.gamma0 + p.gamma1 * c)
        }
    }

    pub fn activity_prob(&self, p: &ParamPoint, level: usize) -> Result<f64> {
        self.link_logit(p, level).map(expit)
    }

    /// Bernoulli log-likelihood of the activity outcomes in `data`.
    pub fn log_likelihood(&self, p: &ParamPoint, data: &[SubjectRecord]) -> Result<f64> {
        data.iter().try_fold(0.0, |acc, s| {
            let eta = self.link_logit(p, s.dose_level)?;
            // log(expit(eta)) = eta - softplus(eta); log(1 - expit(eta)) = -softplus(eta)
            let term = if s.activity { eta - softplus(eta) } else { -softplus(eta) };
            Ok(acc + term)
        })
    }
}

/// Prior on `(gamma0, gamma1, tau)`: normal intercept, gamma slope
/// parameterised by shape and mean, and a discrete prior over plateau levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PriorDoc")]
pub struct PriorSpec {
    pub gamma0_mean: f64,
    pub gamma0_sd: f64,
    pub gamma1_shape: f64,
    pub gamma1_mean: f64,
    pub model_prior: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorDoc {
    gamma0_mean: f64,
    gamma0_sd: f64,
    gamma1_shape: f64,
    gamma1_mean: f64,
    model_prior: Vec<f64>,
}

impl TryFrom<PriorDoc> for PriorSpec {
    type Error = Error;

    fn try_from(d: PriorDoc) -> Result<Self> {
        let p = PriorSpec {
            gamma0_mean: d.gamma0_mean,
            gamma0_sd: d.gamma0_sd,
            gamma1_shape: d.gamma1_shape,
            gamma1_mean: d.gamma1_mean,
            model_prior: d.model_prior,
        };
        p.validate()?;
        Ok(p)
    }
}

pub const DEFAULT_GAMMA0_SD: f64 = 2.0;
pub const DEFAULT_GAMMA1_SHAPE: f64 = 5.0;

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.gamma0_mean.is_finite() {
            return Err(Error::config("gamma0_mean", "must be finite"));
        }
        if !(self.gamma0_sd > 0.0 && self.gamma0_sd.is_finite()) {
            return Err(Error::config("gamma0_sd", "must be > 0"));
        }
        if !(self.gamma1_shape > 0.0 && self.gamma1_shape.is_finite()) {
            return Err(Error::config("gamma1_shape", "must be > 0"));
        }
        if !(self.gamma1_mean > 0.0 && self.gamma1_mean.is_finite()) {
            return Err(Error::config("gamma1_mean", "must be > 0"));
        }
        if self.model_prior.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::config("model_prior", "probabilities must be >= 0"));
        }
        let total: f64 = self.model_prior.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(
                "model_prior",
                format!("probabilities must sum to 1, got {total}"),
            ));
        }
        Ok(())
    }

    /// Checks that the prior matches a grid with `num_levels` levels.
    pub fn validate_for(&self, grid: &DoseGrid) -> Result<()> {
        self.validate()?;
        if self.model_prior.len() != grid.num_levels() {
            return Err(Error::config(
                "model_prior",
                format!(
                    "expected {} model probabilities, got {}",
                    grid.num_levels(),
                    self.model_prior.len()
                ),
            ));
        }
        Ok(())
    }

    /// Rate of the gamma prior on the slope.
    pub fn gamma1_rate(&self) -> f64 {
        self.gamma1_shape / self.gamma1_mean
    }
}

/// Default prior for a grid: intercept centred on `logit(target)` with sd 2,
/// slope with shape 5 whose mean makes the curve pass through the initial
/// guess next to the reference dose, uniform prior on the plateau level.
pub fn default_prior(grid: &DoseGrid) -> Result<PriorSpec> {
    let gamma0_mean = logit(grid.target());
    let l = grid.num_levels();
    let r = grid.ref_level();
    let (guess, anchor) = if r == 1 || r == l {
        (grid.initial_guesses()[1], grid.dose(2))
    } else {
        (grid.initial_guesses()[0], grid.dose(1))
    };
    let denom = (anchor / grid.ref_dose()).ln();
    if denom == 0.0 {
        return Err(Error::config(
            "gamma1_mean",
            "default slope mean is undefined for this grid (reference dose equals the anchor dose); supply an explicit prior",
        ));
    }
    let gamma1_mean = (logit(guess) - gamma0_mean) / denom;
    if !(gamma1_mean > 0.0 && gamma1_mean.is_finite()) {
        return Err(Error::config(
            "gamma1_mean",
            format!(
                "default slope mean {gamma1_mean} is not positive for these initial guesses; supply an explicit prior"
            ),
        ));
    }
    Ok(PriorSpec {
        gamma0_mean,
        gamma0_sd: DEFAULT_GAMMA0_SD,
        gamma1_shape: DEFAULT_GAMMA1_SHAPE,
        gamma1_mean,
        model_prior: vec![1.0 / l as f64; l],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectPhase {
    Startup,
    ModelBased,
}

/// One dosed volunteer and the observed outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub dose_level: usize,
    pub activity: bool,
    pub safety_issue: bool,
    pub cohort_index: usize,
    pub phase: SubjectPhase,
}

/// Per-level activity counts; a sufficient statistic for every model.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LevelCounts {
    pub responders: Vec<u32>,
    pub treated: Vec<u32>,
}

impl LevelCounts {
    pub fn empty(num_levels: usize) -> Self {
        Self {
            responders: vec![0; num_levels],
            treated: vec![0; num_levels],
        }
    }

    pub fn from_subjects(grid: &DoseGrid, data: &[SubjectRecord]) -> Result<Self> {
        let mut c = Self::empty(grid.num_levels());
        for s in data {
            grid.check_level(s.dose_level)?;
            c.add(s.dose_level, s.activity);
        }
        Ok(c)
    }

    pub fn add(&mut self, level: usize, active: bool) {
        self.treated[level - 1] += 1;
        if active {
            self.responders[level - 1] += 1;
        }
    }

    pub fn total(&self) -> u32 {
        self.treated.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }
}
