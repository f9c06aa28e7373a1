//! Posterior inference over the plateau model family.
//!
//! Each model is fitted by deterministic quadrature ([`Integrator`]); the
//! per-model marginal likelihoods give the posterior over plateau levels, and
//! the fits are then combined either by picking the most probable model
//! ("selection") or by model averaging. The no-plateau comparator fits only
//! the top model. [`mh`] holds an independent random-walk sampler used to
//! cross-check the quadrature.

mod integrator;
pub mod mh;

use serde::{Deserialize, Serialize};

pub use integrator::{Integrator, QuadratureConfig};

use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::model::{DoseGrid, LevelCounts, PlateauModel, PriorSpec, SubjectRecord};

/// Relative slack used when breaking ties between nearly equal scores.
pub(crate) const TIE_EPS: f64 = 1e-12;

/// Posterior summary of one plateau model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub tau: usize,
    /// `log P(data | model tau)`.
    pub log_marginal: f64,
    pub phi_hat: Vec<f64>,
    pub phi_var: Vec<f64>,
    /// `P(phi_l > target | data, model tau)`.
    pub exceed: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Selection,
    Bma,
    Blrm,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Selection, Method::Bma, Method::Blrm];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Selection => "selection",
            Method::Bma => "bma",
            Method::Blrm => "blrm",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "selection" => Ok(Method::Selection),
            "bma" => Ok(Method::Bma),
            "blrm" => Ok(Method::Blrm),
            other => Err(Error::config(
                "method",
                format!("unknown method `{other}` (expected selection, bma or blrm)"),
            )),
        }
    }
}

/// Combined per-level estimates that drive allocation decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub method: Method,
    /// Posterior probability of each plateau level.
    pub pi: Vec<f64>,
    /// Most probable plateau level (lowest on ties).
    pub tau_hat: usize,
    pub phi: Vec<f64>,
    pub var: Vec<f64>,
    pub exceed: Vec<f64>,
}

/// Index (1-based) of the largest entry, lowest index among near-ties.
pub(crate) fn argmax_lowest(xs: &[f64]) -> usize {
    let best = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_EPS * best.abs().max(1.0);
    xs.iter().position(|x| best - x <= tol).map_or(1, |i| i + 1)
}

/// Fits one model to raw subject records.
pub fn fit_model(
    model: &PlateauModel<'_>,
    data: &[SubjectRecord],
    prior: &PriorSpec,
    quad: &QuadratureConfig,
) -> Result<ModelFit> {
    let grid = model.grid();
    let counts = LevelCounts::from_subjects(grid, data)?;
    Integrator::new(prior, grid.target(), quad)?.fit(model, &counts)
}

/// Fits every plateau model of the grid.
pub fn fit_family(
    grid: &DoseGrid,
    counts: &LevelCounts,
    integrator: &Integrator,
) -> Result<Vec<ModelFit>> {
    PlateauModel::family(grid)
        .iter()
        .map(|m| integrator.fit(m, counts))
        .collect()
}

/// Posterior probabilities of the plateau levels.
pub fn model_posterior(fits: &[ModelFit], prior: &PriorSpec) -> Result<Vec<f64>> {
    if fits.len() != prior.model_prior.len() {
        return Err(Error::Domain(format!(
            "{} fits for a prior over {} models",
            fits.len(),
            prior.model_prior.len()
        )));
    }
    let logs: Vec<f64> = fits
        .iter()
        .zip(&prior.model_prior)
        .map(|(f, p)| f.log_marginal + p.ln())
        .collect();
    let total = log_sum_exp(&logs);
    if !total.is_finite() {
        return Err(Error::Inference(
            "every model has zero posterior weight".into(),
        ));
    }
    Ok(logs.iter().map(|l| (l - total).exp()).collect())
}

/// Uses the moments of the most probable model.
pub fn combine_selection(fits: &[ModelFit], pi: &[f64]) -> PosteriorSummary {
    let tau_hat = argmax_lowest(pi);
    let chosen = &fits[tau_hat - 1];
    PosteriorSummary {
        method: Method::Selection,
        pi: pi.to_vec(),
        tau_hat,
        phi: chosen.phi_hat.clone(),
        var: chosen.phi_var.clone(),
        exceed: chosen.exceed.clone(),
    }
}

/// Mixes the per-model posteriors with weights `pi`.
pub fn combine_bma(fits: &[ModelFit], pi: &[f64]) -> PosteriorSummary {
    let num_levels = fits[0].phi_hat.len();
    let mut phi = vec![0.0; num_levels];
    let mut second = vec![0.0; num_levels];
    let mut exceed = vec![0.0; num_levels];
    for (fit, &w) in fits.iter().zip(pi) {
        for l in 0..num_levels {
            phi[l] += w * fit.phi_hat[l];
            second[l] += w * (fit.phi_var[l] + fit.phi_hat[l] * fit.phi_hat[l]);
            exceed[l] += w * fit.exceed[l];
        }
    }
    let var = second
        .iter()
        .zip(&phi)
        .map(|(s, m)| (s - m * m).max(0.0))
        .collect();
    PosteriorSummary {
        method: Method::Bma,
        pi: pi.to_vec(),
        tau_hat: argmax_lowest(pi),
        phi,
        var,
        exceed: exceed.into_iter().map(|e| e.clamp(0.0, 1.0)).collect(),
    }
}

/// No-plateau comparator: the top model alone, with all weight on it.
pub fn fit_blrm(
    grid: &DoseGrid,
    counts: &LevelCounts,
    integrator: &Integrator,
) -> Result<(ModelFit, PosteriorSummary)> {
    let l = grid.num_levels();
    let model = PlateauModel::new(l, grid)?;
    let fit = integrator.fit(&model, counts)?;
    let mut pi = vec![0.0; l];
    pi[l - 1] = 1.0;
    let summary = PosteriorSummary {
        method: Method::Blrm,
        pi,
        tau_hat: l,
        phi: fit.phi_hat.clone(),
        var: fit.phi_var.clone(),
        exceed: fit.exceed.clone(),
    };
    Ok((fit, summary))
}

/// Refits the models `method` needs and returns the per-model fits with the
/// combined summary.
pub fn summarize(
    method: Method,
    grid: &DoseGrid,
    prior: &PriorSpec,
    counts: &LevelCounts,
    integrator: &Integrator,
) -> Result<(Vec<ModelFit>, PosteriorSummary)> {
    match method {
        Method::Blrm => {
            let (fit, summary) = fit_blrm(grid, counts, integrator)?;
            Ok((vec![fit], summary))
        }
        Method::Selection | Method::Bma => {
            let fits = fit_family(grid, counts, integrator)?;
            let pi = model_posterior(&fits, prior)?;
            let summary = if method == Method::Selection {
                combine_selection(&fits, &pi)
            } else {
                combine_bma(&fits, &pi)
            };
            Ok((fits, summary))
        }
    }
}

#[cfg(test)]
mod tests;
