use super::*;
use crate::math::expit;
use crate::model::{default_prior, SubjectPhase};

fn grid3() -> DoseGrid {
    DoseGrid::standard(3).unwrap()
}

fn counts(grid: &DoseGrid, resp: &[u32], treated: &[u32]) -> LevelCounts {
    assert_eq!(resp.len(), grid.num_levels());
    LevelCounts {
        responders: resp.to_vec(),
        treated: treated.to_vec(),
    }
}

fn fit(tau: usize, grid: &DoseGrid, c: &LevelCounts, quad: &QuadratureConfig) -> ModelFit {
    let prior = default_prior(grid).unwrap();
    let integ = Integrator::new(&prior, grid.target(), quad).unwrap();
    integ.fit(&PlateauModel::new(tau, grid).unwrap(), c).unwrap()
}

fn sample_fit(tau: usize, phi: &[f64]) -> ModelFit {
    ModelFit {
        tau,
        log_marginal: 0.0,
        phi_hat: phi.to_vec(),
        phi_var: vec![0.01; phi.len()],
        exceed: phi.iter().map(|p| if *p > 0.5 { 0.9 } else { 0.2 }).collect(),
    }
}

/// Riemann sum of `∫ f(g0) N(g0; mu, sd) dg0` over `mu ± 20 sd`.
fn riemann_1d(f: impl Fn(f64) -> f64, mu: f64, sd: f64, nodes: usize) -> f64 {
    let lo = mu - 20.0 * sd;
    let h = 40.0 * sd / nodes as f64;
    (0..nodes)
        .map(|i| {
            let x = lo + (i as f64 + 0.5) * h;
            let z = (x - mu) / sd;
            f(x) * (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()) * h
        })
        .sum()
}

#[test]
fn empty_data_has_zero_log_marginal() {
    let g = grid3();
    let c = LevelCounts::empty(3);
    for tau in 1..=3 {
        let f = fit(tau, &g, &c, &QuadratureConfig::default());
        assert_eq!(f.log_marginal, 0.0);
    }
}

#[test]
fn flat_model_marginal_matches_riemann_oracle() {
    let g = grid3();
    // one responder and one non-responder, both at level 2
    let c = counts(&g, &[0, 1, 0], &[0, 2, 0]);
    let f = fit(1, &g, &c, &QuadratureConfig::default());
    let oracle = riemann_1d(|x| expit(x) * (1.0 - expit(x)), 0.0, 2.0, 200_000);
    let rel = (f.log_marginal.exp() - oracle).abs() / oracle;
    assert!(rel < 1e-6, "quadrature {} oracle {oracle} rel {rel}", f.log_marginal.exp());

    let mean_oracle =
        riemann_1d(|x| expit(x) * expit(x) * (1.0 - expit(x)), 0.0, 2.0, 200_000) / oracle;
    assert!((f.phi_hat[0] - mean_oracle).abs() < 1e-8);
    let exceed_oracle = riemann_1d(
        |x| if x > 0.0 { expit(x) * (1.0 - expit(x)) } else { 0.0 },
        0.0,
        2.0,
        200_000,
    ) / oracle;
    assert!((f.exceed[2] - exceed_oracle).abs() < 1e-6);
}

#[test]
fn flat_model_empty_data_moments_are_prior_predictive() {
    let g = grid3();
    let f = fit(1, &g, &LevelCounts::empty(3), &QuadratureConfig::default());
    let m = riemann_1d(expit, 0.0, 2.0, 200_000);
    assert!((f.phi_hat[0] - m).abs() < 1e-9);
    // symmetric prior around logit(0.5): exceedance is one half
    assert!((f.exceed[0] - 0.5).abs() < 1e-9);
}

#[test]
fn fit_is_flat_on_the_plateau_and_monotone_below() {
    let g = DoseGrid::standard(5).unwrap();
    let c = counts(&g, &[1, 2, 3, 3, 2], &[4, 4, 4, 4, 4]);
    for tau in 1..=5 {
        let f = fit(tau, &g, &c, &QuadratureConfig::default());
        for l in tau..5 {
            assert_eq!(f.phi_hat[l], f.phi_hat[tau - 1]);
            assert_eq!(f.exceed[l], f.exceed[tau - 1]);
        }
        for l in 1..5 {
            assert!(f.phi_hat[l] >= f.phi_hat[l - 1]);
            assert!(f.exceed[l] + 1e-12 >= f.exceed[l - 1]);
        }
        assert!(f.phi_hat.iter().all(|p| *p > 0.0 && *p < 1.0));
        assert!(f.phi_var.iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn node_doubling_changes_little() {
    let g = DoseGrid::standard(4).unwrap();
    let c = counts(&g, &[1, 3, 4, 5], &[5, 5, 5, 5]);
    let base = QuadratureConfig::default();
    for tau in 1..=4 {
        let a = fit(tau, &g, &c, &base);
        let b = fit(tau, &g, &c, &base.doubled());
        assert!((a.log_marginal - b.log_marginal).abs() < 1e-6);
        for l in 0..4 {
            assert!((a.phi_hat[l] - b.phi_hat[l]).abs() < 1e-6);
            assert!((a.exceed[l] - b.exceed[l]).abs() < 1e-6);
        }
    }
}

#[test]
fn model_posterior_examples() {
    let g = grid3();
    let prior = default_prior(&g).unwrap();
    let mut fits: Vec<ModelFit> = (1..=3).map(|t| sample_fit(t, &[0.4, 0.5, 0.6])).collect();
    let pi = model_posterior(&fits, &prior).unwrap();
    for p in &pi {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    fits[0].log_marginal = 0.2f64.ln();
    fits[1].log_marginal = 0.1f64.ln();
    fits[2].log_marginal = 0.1f64.ln();
    let pi = model_posterior(&fits, &prior).unwrap();
    assert!((pi[0] - 0.5).abs() < 1e-12);
    assert!((pi[1] - 0.25).abs() < 1e-12);
    assert!((pi[2] - 0.25).abs() < 1e-12);

    let single = PriorSpec {
        model_prior: vec![1.0],
        ..prior.clone()
    };
    assert_eq!(model_posterior(&fits[..1], &single).unwrap(), vec![1.0]);

    for f in fits.iter_mut() {
        f.log_marginal = f64::NEG_INFINITY;
    }
    assert!(matches!(
        model_posterior(&fits, &prior),
        Err(Error::Inference(_))
    ));
}

#[test]
fn selection_examples() {
    let fits = vec![
        sample_fit(1, &[0.3, 0.3, 0.3]),
        sample_fit(2, &[0.3, 0.6, 0.6]),
        sample_fit(3, &[0.3, 0.5, 0.7]),
    ];
    let s = combine_selection(&fits, &[0.2, 0.5, 0.3]);
    assert_eq!(s.tau_hat, 2);
    assert_eq!(s.phi, fits[1].phi_hat);
    assert_eq!(s.exceed, fits[1].exceed);
    assert_eq!(s.method, Method::Selection);
    let s = combine_selection(&fits, &[0.4, 0.4, 0.2]);
    assert_eq!(s.tau_hat, 1);
    let s = combine_selection(&fits[..1], &[1.0]);
    assert_eq!(s.phi, fits[0].phi_hat);
}

#[test]
fn bma_examples() {
    let same = sample_fit(1, &[0.3, 0.5, 0.7]);
    let fits = vec![same.clone(), ModelFit { tau: 2, ..same.clone() }];
    let s = combine_bma(&fits, &[0.3, 0.7]);
    for l in 0..3 {
        assert!((s.phi[l] - same.phi_hat[l]).abs() < 1e-15);
        assert!((s.var[l] - same.phi_var[l]).abs() < 1e-15);
        assert!((s.exceed[l] - same.exceed[l]).abs() < 1e-15);
    }

    let a = ModelFit {
        tau: 1,
        log_marginal: 0.0,
        phi_hat: vec![0.4],
        phi_var: vec![0.0],
        exceed: vec![0.1],
    };
    let b = ModelFit {
        tau: 2,
        log_marginal: 0.0,
        phi_hat: vec![0.6],
        phi_var: vec![0.0],
        exceed: vec![0.7],
    };
    let s = combine_bma(&[a.clone(), b.clone()], &[0.5, 0.5]);
    assert!((s.phi[0] - 0.5).abs() < 1e-15);
    assert!((s.var[0] - 0.01).abs() < 1e-12);
    assert!((s.exceed[0] - 0.4).abs() < 1e-15);

    let s = combine_bma(&[a.clone(), b], &[1.0, 0.0]);
    assert_eq!(s.phi, a.phi_hat);
    assert_eq!(s.exceed, a.exceed);
}

#[test]
fn blrm_equals_selection_over_top_model() {
    let g = DoseGrid::standard(4).unwrap();
    let prior = default_prior(&g).unwrap();
    let integ = Integrator::new(&prior, 0.5, &QuadratureConfig::default()).unwrap();
    let c = counts(&g, &[1, 2, 2, 2], &[4, 4, 4, 4]);
    let (fit, blrm) = fit_blrm(&g, &c, &integ).unwrap();
    let sel = combine_selection(&[fit.clone()], &[1.0]);
    assert_eq!(blrm.phi, sel.phi);
    assert_eq!(blrm.exceed, sel.exceed);
    assert_eq!(blrm.tau_hat, 4);
    assert_eq!(blrm.pi, vec![0.0, 0.0, 0.0, 1.0]);
    assert!(blrm.phi.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn fit_model_accepts_subject_records() {
    let g = grid3();
    let prior = default_prior(&g).unwrap();
    let data: Vec<SubjectRecord> = [(1, true), (1, false), (2, true), (3, true)]
        .iter()
        .map(|&(l, a)| SubjectRecord {
            dose_level: l,
            activity: a,
            safety_issue: false,
            cohort_index: 0,
            phase: SubjectPhase::Startup,
        })
        .collect();
    let model = PlateauModel::new(3, &g).unwrap();
    let f = fit_model(&model, &data, &prior, &QuadratureConfig::default()).unwrap();
    let c = counts(&g, &[1, 1, 1], &[2, 1, 1]);
    let integ = Integrator::new(&prior, 0.5, &QuadratureConfig::default()).unwrap();
    assert_eq!(f, integ.fit(&model, &c).unwrap());
}

#[test]
fn method_parses_by_name() {
    assert_eq!("BMA".parse::<Method>().unwrap(), Method::Bma);
    assert!("crm".parse::<Method>().is_err());
    assert_eq!(serde_json::to_string(&Method::Blrm).unwrap(), "\"blrm\"");
}
