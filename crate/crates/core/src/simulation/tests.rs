use super::*;
use crate::design::TrialPhase;

fn config(method: Method, l: usize, n: usize) -> DesignConfig {
    DesignConfig::standard(method, l, n).unwrap()
}

#[test]
fn builtin_scenario_examples() {
    let s = builtin_scenarios(3).unwrap();
    assert_eq!(s.len(), 8);
    assert_eq!(s[0].phi, vec![0.5, 0.65, 0.8]);
    assert_eq!(s[0].psi, vec![0.0005, 0.001, 0.002]);
    assert_eq!(s[0].mad_truth, Some(1));
    let s4 = builtin_scenarios(4).unwrap();
    assert_eq!(s4[4].phi, vec![0.2, 0.35, 0.5, 0.5]);
    assert_eq!(s4[4].mad_truth, Some(3));
    let s5 = builtin_scenarios(5).unwrap();
    assert_eq!(s5[6].phi, vec![0.2, 0.35, 0.35, 0.35, 0.35]);
    assert_eq!(s5[6].mad_truth, None);
    assert!(builtin_scenarios(6).is_err());
    for l in 3..=5 {
        for sc in builtin_scenarios(l).unwrap() {
            assert!(sc.validate(l).unwrap().is_empty());
        }
    }
}

#[test]
fn scenario_validation() {
    let mut s = builtin_scenarios(3).unwrap().remove(0);
    s.psi = vec![0.1, 0.05, 0.2];
    assert_eq!(s.validate(3).unwrap().len(), 1);
    s.phi[0] = 1.5;
    assert!(s.validate(3).is_err());
    assert!(builtin_scenarios(3).unwrap()[0].validate(4).is_err());
}

#[test]
fn scenario_files_parse() {
    let doc = r#"
[[scenario]]
name = "steep"
phi = [0.1, 0.5, 0.9]
psi = [0.0, 0.0, 0.0]
mad_truth = 2
"#;
    let s = parse_scenarios(doc, false).unwrap();
    assert_eq!(s[0].name, "steep");
    let json = serde_json::to_string(&s).unwrap();
    assert_eq!(parse_scenarios(&json, true).unwrap(), s);
    assert!(parse_scenarios("scenario = []", false).is_err());
}

#[test]
fn no_safety_events_means_full_startup() {
    let c = config(Method::Selection, 4, 24);
    let sc = Scenario {
        name: "safe".into(),
        phi: vec![0.3, 0.4, 0.5, 0.6],
        psi: vec![0.0; 4],
        mad_truth: Some(3),
    };
    for seed in 0..10 {
        let t = simulate_trial(&sc, &c, seed).unwrap();
        for level in 0..4 {
            assert!(t.allocated[level] >= 4, "seed {seed}: {:?}", t.allocated);
        }
    }
}

#[test]
fn fully_active_doses_select_the_first_level() {
    let c = config(Method::Bma, 3, 18);
    let sc = Scenario {
        name: "all active".into(),
        phi: vec![1.0; 3],
        psi: vec![0.0; 3],
        mad_truth: Some(1),
    };
    let oc = run_operating_characteristics(&sc, &c, 40, 11, Some(1)).unwrap();
    assert_eq!(oc.sel_pct[0], 100.0);
    assert_eq!(oc.early_term_pct, 0.0);
}

#[test]
fn trials_are_reproducible() {
    let c = config(Method::Bma, 3, 24);
    let sc = &builtin_scenarios(3).unwrap()[3];
    let a = simulate_trial(sc, &c, 77).unwrap();
    let b = simulate_trial(sc, &c, 77).unwrap();
    assert_eq!(a, b);
    let total: u32 = a.allocated.iter().sum();
    assert_eq!(total as usize, a.enrolled);
    assert!(a.enrolled <= 24);
    match a.phase {
        TrialPhase::Completed => assert!(a.final_selection.is_some()),
        _ => assert!(a.final_selection.is_none()),
    }
}

#[test]
fn aggregation_ignores_worker_count() {
    let c = config(Method::Selection, 3, 18);
    let sc = &builtin_scenarios(3).unwrap()[6];
    let one = run_operating_characteristics(sc, &c, 24, 5, Some(1)).unwrap();
    let three = run_operating_characteristics(sc, &c, 24, 5, Some(3)).unwrap();
    assert_eq!(one, three);
    let total: f64 = one.sel_pct.iter().sum::<f64>() + one.early_term_pct;
    assert!((total - 100.0).abs() < 1e-9);
    assert!(one.mean_n.iter().sum::<f64>() <= 18.0 + 1e-12);
    assert!((one.mean_n.iter().sum::<f64>() - one.total_mean).abs() < 1e-9);
}

#[test]
fn zero_replicates_is_an_error() {
    let c = config(Method::Selection, 3, 18);
    let sc = &builtin_scenarios(3).unwrap()[0];
    assert!(run_operating_characteristics(sc, &c, 0, 1, None).is_err());
}

#[test]
fn csv_and_report_layout() {
    let c = config(Method::Blrm, 3, 18);
    let sc = builtin_scenarios(3).unwrap().remove(1);
    let reps = run_replicates(&sc, &c, 6, 3, Some(1)).unwrap();
    let oc = OperatingCharacteristics::from_replicates(&sc, &c, 3, &reps);
    let mut buf = Vec::new();
    report::write_csv(&mut buf, &[oc.clone()]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scenario,method,L,n,sel_pct_1,sel_pct_2,sel_pct_3,mean_n_1,mean_n_2,mean_n_3,early_term_pct,total_mean,total_sd,reps,seed"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..4], &["2", "blrm", "3", "18"]);
    assert_eq!(row[13], "6");

    let mut buf = Vec::new();
    report::write_plot_data(&mut buf, &sc, Method::Blrm, 18, &reps, true).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.starts_with("scenario,method,L,n,replicate,seed,selected,n_1,n_2,n_3,total,phase"));

    let md = report::markdown_report(Method::Blrm, 3, &[(sc, vec![oc])]);
    assert!(md.contains("## Scenario 2"));
    assert!(md.contains("| phi | 0.2 | 0.35 | **0.5** |"));
    assert!(md.contains("| n = 18 |"));
}
