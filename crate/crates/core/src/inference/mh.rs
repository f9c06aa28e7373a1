//! Random-walk Metropolis sampler on `(gamma0, log gamma1)`.
//!
//! This is a cross-check for the quadrature engine and is deliberately written
//! against the raw model API (`PlateauModel::log_likelihood`) rather than the
//! count-based fast path. Components are updated one at a time with Gaussian
//! proposals whose scales are adapted during burn-in towards an acceptance
//! rate of 0.44 and then frozen.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParamPoint, PlateauModel, PriorSpec, SubjectRecord};

pub const MIN_DRAWS: usize = 10_000;
const TARGET_ACCEPTANCE: f64 = 0.44;

/// Sample-based posterior moments with Monte-Carlo standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhFit {
    pub tau: usize,
    pub draws: usize,
    pub phi_hat: Vec<f64>,
    pub phi_var: Vec<f64>,
    pub exceed: Vec<f64>,
    /// Batch-means standard error of each `phi_hat` entry.
    pub phi_mcse: Vec<f64>,
    pub exceed_mcse: Vec<f64>,
    /// Post-adaptation acceptance rates for the intercept and log-slope moves.
    pub acceptance: [f64; 2],
    pub warning: Option<String>,
}

struct Target<'a, 'g> {
    model: &'a PlateauModel<'g>,
    data: &'a [SubjectRecord],
    prior: &'a PriorSpec,
}

impl Target<'_, '_> {
    fn log_density(&self, gamma0: f64, log_gamma1: f64) -> f64 {
        let p = ParamPoint {
            gamma0,
            gamma1: log_gamma1.exp(),
        };
        let ll = match self.model.log_likelihood(&p, self.data) {
            Ok(v) => v,
            Err(_) => return f64::NEG_INFINITY,
        };
        let z = (gamma0 - self.prior.gamma0_mean) / self.prior.gamma0_sd;
        // density of log(gamma1) under the gamma prior, up to a constant
        let lp_u = self.prior.gamma1_shape * log_gamma1 - self.prior.gamma1_rate() * p.gamma1;
        ll - 0.5 * z * z + lp_u
    }
}

/// Runs the sampler for `draws` retained iterations after an adaptive burn-in.
pub fn mh_oracle(
    model: &PlateauModel<'_>,
    data: &[SubjectRecord],
    prior: &PriorSpec,
    draws: usize,
    seed: u64,
) -> Result<MhFit> {
    if draws < MIN_DRAWS {
        return Err(Error::config(
            "draws",
            format!("at least {MIN_DRAWS} draws required, got {draws}"),
        ));
    }
    prior.validate()?;
    let grid = model.grid();
    for s in data {
        grid.check_level(s.dose_level)?;
    }
    let target = Target { model, data, prior };
    let num_levels = grid.num_levels();
    let target_rate = grid.target();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut state = [prior.gamma0_mean, prior.gamma1_mean.ln()];
    let mut current = target.log_density(state[0], state[1]);
    let mut log_scale = [prior.gamma0_sd.ln(), (1.0 / prior.gamma1_shape.sqrt()).ln()];

    let step = |state: &mut [f64; 2],
                current: &mut f64,
                scale: &[f64; 2],
                rng: &mut ChaCha8Rng,
                accepted: &mut [usize; 2]| {
        for c in 0..2 {
            let z: f64 = rng.sample(StandardNormal);
            let mut proposal = *state;
            proposal[c] += scale[c] * z;
            let lp = target.log_density(proposal[0], proposal[1]);
            let u: f64 = rng.random();
            if u.ln() < lp - *current {
                *state = proposal;
                *current = lp;
                accepted[c] += 1;
            }
        }
    };

    let burn_in = (draws / 4).max(5_000);
    let batch = 100;
    let mut round = 0usize;
    let mut done = 0usize;
    while done < burn_in {
        let mut accepted = [0usize; 2];
        let scale = [log_scale[0].exp(), log_scale[1].exp()];
        for _ in 0..batch {
            step(&mut state, &mut current, &scale, &mut rng, &mut accepted);
        }
        round += 1;
        let gain = 1.0 / (round as f64).sqrt();
        for c in 0..2 {
            let rate = accepted[c] as f64 / batch as f64;
            log_scale[c] += gain * (rate - TARGET_ACCEPTANCE);
        }
        done += batch;
    }

    let scale = [log_scale[0].exp(), log_scale[1].exp()];
    let mut accepted = [0usize; 2];
    let mut phi_draws = vec![Vec::with_capacity(draws); num_levels];
    for _ in 0..draws {
        step(&mut state, &mut current, &scale, &mut rng, &mut accepted);
        let p = ParamPoint {
            gamma0: state[0],
            gamma1: state[1].exp(),
        };
        for (l, col) in phi_draws.iter_mut().enumerate() {
            col.push(model.activity_prob(&p, l + 1)?);
        }
    }

    let mut fit = MhFit {
        tau: model.tau(),
        draws,
        phi_hat: Vec::with_capacity(num_levels),
        phi_var: Vec::with_capacity(num_levels),
        exceed: Vec::with_capacity(num_levels),
        phi_mcse: Vec::with_capacity(num_levels),
        exceed_mcse: Vec::with_capacity(num_levels),
        acceptance: [
            accepted[0] as f64 / draws as f64,
            accepted[1] as f64 / draws as f64,
        ],
        warning: None,
    };
    for col in &phi_draws {
        let (mean, var) = mean_var(col);
        fit.phi_hat.push(mean);
        fit.phi_var.push(var);
        fit.phi_mcse.push(batch_means_se(col));
        let ind: Vec<f64> = col
            .iter()
            .map(|&p| if p > target_rate { 1.0 } else { 0.0 })
            .collect();
        fit.exceed.push(mean_var(&ind).0);
        fit.exceed_mcse.push(batch_means_se(&ind));
    }
    let slope_matters = model.tau() > 1;
    let out_of_band = |r: f64| !(0.05..=0.95).contains(&r);
    if out_of_band(fit.acceptance[0]) || (slope_matters && out_of_band(fit.acceptance[1])) {
        fit.warning = Some(format!(
            "acceptance rates {:.3}/{:.3} outside [0.05, 0.95] after adaptation",
            fit.acceptance[0], fit.acceptance[1]
        ));
    }
    Ok(fit)
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Standard error of the mean from non-overlapping batch means, with about
/// `sqrt(n)` batches.
fn batch_means_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    let size = (n as f64).sqrt().floor() as usize;
    let batches = n / size;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let (_, var) = mean_var(&means);
    (var / batches as f64).sqrt()
}
