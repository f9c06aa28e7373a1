//! Deterministic posterior computation for a single plateau model.
//!
//! The slope is integrated on `u = log(gamma1)` with Gauss-Legendre over a
//! window holding all but ~1e-7 of the prior mass in each tail. For each slope
//! node the intercept is integrated with Gauss-Hermite centred and scaled at
//! the conditional posterior mode (adaptive Gauss-Hermite), which keeps the
//! rule accurate once the likelihood is much narrower than the prior.
//! Exceedance probabilities `P(phi_l > target)` are truncated integrals in the
//! intercept and use a Gauss-Legendre rule on the truncated range, so the step
//! in the integrand never falls between nodes.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::gamma::ln_gamma;

use super::ModelFit;
use crate::error::{Error, Result};
use crate::math::{log_sum_exp, logit, softplus_expit};
use crate::model::{LevelCounts, PlateauModel, PriorSpec};
use crate::quadrature::{GaussHermite, GaussLegendre};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
/// Prior mass left outside the slope window, per tail.
const SLOPE_TAIL_MASS: f64 = 1e-7;
/// Half-width, in conditional posterior sds, of the intercept range used for
/// exceedance integrals.
const TAIL_SPAN_SDS: f64 = 12.0;
/// Slices lighter than this, relative to the total, are left out of the
/// moments. Their combined contribution is far below the quadrature error.
const NEGLIGIBLE_LOG_WEIGHT: f64 = -32.2; // ~1e-14

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    pub gauss_hermite_nodes: usize,
    pub gauss_legendre_nodes: usize,
    /// Half-width of the slope window on the log scale around
    /// `log(gamma1_mean)`; `6 / sqrt(gamma1_shape)` when absent. The window is
    /// widened further if needed to reach the prior tail quantiles.
    pub log_gamma1_halfwidth: Option<f64>,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            gauss_hermite_nodes: 40,
            gauss_legendre_nodes: 40,
            log_gamma1_halfwidth: None,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=400).contains(&self.gauss_hermite_nodes) {
            return Err(Error::config("gauss_hermite_nodes", "must be in 2..=400"));
        }
        if !(2..=400).contains(&self.gauss_legendre_nodes) {
            return Err(Error::config("gauss_legendre_nodes", "must be in 2..=400"));
        }
        if let Some(h) = self.log_gamma1_halfwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::config("log_gamma1_halfwidth", "must be > 0"));
            }
        }
        Ok(())
    }

    /// Same configuration with both node counts doubled.
    pub fn doubled(&self) -> Self {
        Self {
            gauss_hermite_nodes: self.gauss_hermite_nodes * 2,
            gauss_legendre_nodes: self.gauss_legendre_nodes * 2,
            log_gamma1_halfwidth: self.log_gamma1_halfwidth,
        }
    }
}

/// Precomputed rules for one prior; reusable across models and datasets.
#[derive(Debug, Clone)]
pub struct Integrator {
    gamma0_mean: f64,
    gamma0_sd: f64,
    target_logit: f64,
    hermite: GaussHermite,
    legendre: GaussLegendre,
    /// `(u, log weight)` with weights normalised to sum to one.
    slope_nodes: Vec<(f64, f64)>,
    slope_window: (f64, f64),
}

/// Per-slope-node quantities.
struct Slice {
    slope: f64,
    mode: f64,
    scale: f64,
    h_mode: f64,
    /// `∫ exp(h - h_mode) d gamma0`.
    integral: f64,
    log_mass: f64,
    mean: Vec<f64>,
    second: Vec<f64>,
}

impl Integrator {
    pub fn new(prior: &PriorSpec, target: f64, quad: &QuadratureConfig) -> Result<Self> {
        prior.validate()?;
        quad.validate()?;
        let shape = prior.gamma1_shape;
        let rate = prior.gamma1_rate();
        let centre = prior.gamma1_mean.ln();
        let half = quad
            .log_gamma1_halfwidth
            .unwrap_or(6.0 / shape.sqrt());
        let gamma = Gamma::new(shape, rate)
            .map_err(|e| Error::config("gamma1_shape", e.to_string()))?;
        let q_lo = gamma.inverse_cdf(SLOPE_TAIL_MASS).ln();
        let q_hi = gamma.inverse_cdf(1.0 - SLOPE_TAIL_MASS).ln();
        let lo = (centre - half).min(q_lo);
        let hi = (centre + half).max(q_hi);
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Inference(format!(
                "slope window [{lo}, {hi}] is degenerate"
            )));
        }
        let legendre = GaussLegendre::new(quad.gauss_legendre_nodes);
        let log_norm = shape * rate.ln() - ln_gamma(shape);
        let raw: Vec<(f64, f64)> = legendre
            .on_interval(lo, hi)
            .map(|(u, w)| (u, w.ln() + log_norm + shape * u - rate * u.exp()))
            .collect();
        let total = log_sum_exp(&raw.iter().map(|(_, lw)| *lw).collect::<Vec<_>>());
        let slope_nodes = raw.into_iter().map(|(u, lw)| (u, lw - total)).collect();
        Ok(Self {
            gamma0_mean: prior.gamma0_mean,
            gamma0_sd: prior.gamma0_sd,
            target_logit: logit(target),
            hermite: GaussHermite::new(quad.gauss_hermite_nodes),
            legendre,
            slope_nodes,
            slope_window: (lo, hi),
        })
    }

    /// Bounds of the `log(gamma1)` window.
    pub fn slope_window(&self) -> (f64, f64) {
        self.slope_window
    }

    /// Marginal likelihood and per-level posterior moments of one model.
    pub fn fit(&self, model: &PlateauModel<'_>, counts: &LevelCounts) -> Result<ModelFit> {
        let num_levels = model.grid().num_levels();
        if counts.treated.len() != num_levels {
            return Err(Error::Domain(format!(
                "counts cover {} levels, grid has {num_levels}",
                counts.treated.len()
            )));
        }
        let covs = model.covariates();
        // distinct covariate values: one per level below the plateau, one for the plateau
        let mut distinct: Vec<f64> = Vec::with_capacity(num_levels);
        let mut level_group = Vec::with_capacity(num_levels);
        for c in &covs {
            match distinct.iter().position(|d| d == c) {
                Some(k) => level_group.push(k),
                None => {
                    distinct.push(*c);
                    level_group.push(distinct.len() - 1);
                }
            }
        }
        let mut resp = vec![0.0; distinct.len()];
        let mut treated = vec![0.0; distinct.len()];
        for (l, &k) in level_group.iter().enumerate() {
            resp[k] += f64::from(counts.responders[l]);
            treated[k] += f64::from(counts.treated[l]);
        }
        let groups = Groups {
            covs: &distinct,
            resp: &resp,
            treated: &treated,
        };

        let flat = model.tau() == 1;
        let single = [(0.0, 0.0)];
        let nodes: &[(f64, f64)] = if flat { &single } else { &self.slope_nodes };

        let mut slices = Vec::with_capacity(nodes.len());
        let mut mode = self.gamma0_mean;
        for &(u, log_w) in nodes {
            let slope = if flat { 0.0 } else { u.exp() };
            let mut s = self.slice(&groups, slope, &mut mode)?;
            s.log_mass += log_w;
            slices.push(s);
        }

        let log_masses: Vec<f64> = slices.iter().map(|s| s.log_mass).collect();
        let log_total = log_sum_exp(&log_masses);
        if !log_total.is_finite() {
            return Err(Error::Inference(format!(
                "marginal likelihood of model tau={} is not finite ({log_total}); {} observations, slope window {:?}",
                model.tau(),
                counts.total(),
                self.slope_window
            )));
        }
        let k = distinct.len();
        let mut mean = vec![0.0; k];
        let mut second = vec![0.0; k];
        let mut exceed = vec![0.0; k];
        let mut tail = vec![0.0; k];
        for s in &slices {
            let rel = s.log_mass - log_total;
            if rel < NEGLIGIBLE_LOG_WEIGHT {
                continue;
            }
            let w = rel.exp();
            self.exceedance(&groups, s, &mut tail);
            for g in 0..k {
                mean[g] += w * s.mean[g];
                second[g] += w * s.second[g];
                exceed[g] += w * tail[g];
            }
        }
        let phi_hat: Vec<f64> = level_group.iter().map(|&g| mean[g]).collect();
        let phi_var = level_group
            .iter()
            .map(|&g| (second[g] - mean[g] * mean[g]).max(0.0))
            .collect();
        let exceed = level_group
            .iter()
            .map(|&g| exceed[g].clamp(0.0, 1.0))
            .collect();
        let log_marginal = if counts.is_empty() { 0.0 } else { log_total };
        Ok(ModelFit {
            tau: model.tau(),
            log_marginal,
            phi_hat,
            phi_var,
            exceed,
        })
    }

    /// Integrates over the intercept for a fixed slope. `mode` carries the
    /// previous slice's mode in as a starting point and this slice's mode out.
    fn slice(&self, groups: &Groups<'_>, slope: f64, mode: &mut f64) -> Result<Slice> {
        let mu = self.gamma0_mean;
        let sd = self.gamma0_sd;
        let f = SliceDensity::new(groups, slope, mu, sd);
        let k = groups.covs.len();

        let n_total: f64 = groups.treated.iter().sum();
        let mut lo = mu - sd * sd * n_total - 1.0;
        let mut hi = mu + sd * sd * n_total + 1.0;
        let mut x = mode.clamp(lo, hi);
        let mut converged = false;
        for _ in 0..200 {
            let (_, d1, d2) = f.eval(x);
            if d1 > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let mut next = x - d1 / d2;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - x).abs();
            x = next;
            if step < 1e-11 * (1.0 + x.abs()) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Inference(format!(
                "intercept mode search did not converge at slope {slope}"
            )));
        }
        *mode = x;
        let (h_mode, _, d2) = f.eval(x);
        let scale = 1.0 / (-d2).sqrt();

        let mut z = 0.0;
        let mut mean = vec![0.0; k];
        let mut second = vec![0.0; k];
        let mut probs = [0.0f64; crate::model::MAX_LEVELS];
        let gh = &self.hermite;
        for (node, lw) in gh.nodes.iter().zip(&gh.log_weights_unweighted) {
            let g0 = x + SQRT_2 * scale * node;
            let h = f.eval_probs(g0, &mut probs[..k]);
            let w = (lw + h - h_mode).exp();
            z += w;
            for g in 0..k {
                let p = probs[g];
                mean[g] += w * p;
                second[g] += w * p * p;
            }
        }
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::Inference(format!(
                "intercept quadrature underflowed at slope {slope}"
            )));
        }
        for g in 0..k {
            mean[g] /= z;
            second[g] /= z;
        }
        // ∫ exp(h - h_mode) d g0 = sqrt(2) * scale * z
        let integral = SQRT_2 * scale * z;
        let log_mass = h_mode + integral.ln() - LN_SQRT_2PI - sd.ln();
        Ok(Slice {
            slope,
            mode: x,
            scale,
            h_mode,
            integral,
            log_mass,
            mean,
            second,
        })
    }

    /// `P(gamma0 + slope * cov_g > target logit)` within one slice, written to `out`.
    fn exceedance(&self, groups: &Groups<'_>, s: &Slice, out: &mut [f64]) {
        let f = SliceDensity::new(groups, s.slope, self.gamma0_mean, self.gamma0_sd);
        let span_lo = s.mode - TAIL_SPAN_SDS * s.scale;
        let span_hi = s.mode + TAIL_SPAN_SDS * s.scale;
        for (g, e) in out.iter_mut().enumerate() {
            let threshold = self.target_logit - f.eta_off[g];
            *e = if threshold <= span_lo {
                1.0
            } else if threshold >= span_hi {
                0.0
            } else {
                let tail: f64 = self
                    .legendre
                    .on_interval(threshold, span_hi)
                    .map(|(g0, w)| w * (f.eval(g0).0 - s.h_mode).exp())
                    .sum();
                (tail / s.integral).clamp(0.0, 1.0)
            };
        }
    }
}

/// Unnormalised log density of the intercept for a fixed slope: the
/// log-likelihood plus the normal prior kernel.
struct SliceDensity<'a> {
    groups: &'a Groups<'a>,
    eta_off: [f64; crate::model::MAX_LEVELS],
    mu: f64,
    prec: f64,
}

impl<'a> SliceDensity<'a> {
    fn new(groups: &'a Groups<'a>, slope: f64, mu: f64, sd: f64) -> Self {
        let mut eta_off = [0.0f64; crate::model::MAX_LEVELS];
        for (o, c) in eta_off.iter_mut().zip(groups.covs) {
            *o = slope * c;
        }
        Self {
            groups,
            eta_off,
            mu,
            prec: 1.0 / (sd * sd),
        }
    }

    /// Value with first and second derivatives.
    #[inline]
    fn eval(&self, g0: f64) -> (f64, f64, f64) {
        let d = g0 - self.mu;
        let mut h = -0.5 * d * d * self.prec;
        let mut d1 = -d * self.prec;
        let mut d2 = -self.prec;
        let gr = self.groups;
        for g in 0..gr.covs.len() {
            let n = gr.treated[g];
            if n == 0.0 {
                continue;
            }
            let eta = g0 + self.eta_off[g];
            let (sp, p) = softplus_expit(eta);
            h += gr.resp[g] * eta - n * sp;
            d1 += gr.resp[g] - n * p;
            d2 -= n * p * (1.0 - p);
        }
        (h, d1, d2)
    }

    /// Value, with the activity probability of every group written to `probs`.
    #[inline]
    fn eval_probs(&self, g0: f64, probs: &mut [f64]) -> f64 {
        let d = g0 - self.mu;
        let mut h = -0.5 * d * d * self.prec;
        let gr = self.groups;
        for (g, out) in probs.iter_mut().enumerate() {
            let eta = g0 + self.eta_off[g];
            let (sp, p) = softplus_expit(eta);
            *out = p;
            h += gr.resp[g] * eta - gr.treated[g] * sp;
        }
        h
    }
}

struct Groups<'a> {
    covs: &'a [f64],
    resp: &'a [f64],
    treated: &'a [f64],
}
