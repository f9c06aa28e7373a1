mod common;

use std::path::Path;

use common::deterministic_state;
use plateau_core::design::{CohortOutcome, DesignConfig, TraceEvent};
use plateau_core::inference::Method;
use plateau_core::simulation::{builtin_scenarios, simulate_trial};
use plateau_service::AppState;

/// Outcomes of each cohort of a simulated trial, in order.
fn simulated_cohorts(trace: &[TraceEvent]) -> Vec<Vec<CohortOutcome>> {
    trace
        .iter()
        .filter_map(|e| match e {
            TraceEvent::OutcomesRecorded { outcomes, .. } => Some(outcomes.clone()),
            _ => None,
        })
        .collect()
}

async fn drive(state: &AppState, id: &str, cohorts: &[Vec<CohortOutcome>], from: usize) {
    for (seq, outcomes) in cohorts.iter().enumerate().skip(from) {
        state.record_cohort(id, seq, outcomes).await.unwrap();
    }
}

fn logged_events(state: &AppState, id: &str) -> Vec<TraceEvent> {
    state.events(id).unwrap().into_iter().map(|r| r.event).collect()
}

#[tokio::test]
async fn service_reproduces_the_design_engine() {
    for (method, l, n, scenario, seed) in [
        (Method::Selection, 3, 24, 3, 1u64),
        (Method::Bma, 4, 30, 7, 2),
        (Method::Blrm, 3, 18, 0, 3),
        (Method::Bma, 5, 30, 1, 4),
        (Method::Selection, 3, 40, 6, 5),
    ] {
        let config = DesignConfig::standard(method, l, n).unwrap();
        let sc = &builtin_scenarios(l).unwrap()[scenario];
        let sim = simulate_trial(sc, &config, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let state = deterministic_state(dir.path());
        let id = state.create_trial(config, Some(seed)).unwrap().id;
        drive(&state, &id, &simulated_cohorts(&sim.trace), 0).await;
        assert_eq!(logged_events(&state, &id), sim.trace, "{method} L={l} n={n}");
        let view = state.trial(&id).unwrap();
        assert_eq!(view.phase, sim.phase);
        assert_eq!(view.stop.and_then(|s| s.final_selection), sim.final_selection);
    }
}

fn snapshot_json(state: &AppState, id: &str) -> [String; 3] {
    [
        serde_json::to_string(&state.trial(id).unwrap()).unwrap(),
        serde_json::to_string(&state.posterior(id).unwrap()).unwrap(),
        serde_json::to_string(&state.events(id).unwrap()).unwrap(),
    ]
}

#[tokio::test]
async fn restart_yields_identical_views() {
    let dir = tempfile::tempdir().unwrap();
    let config = DesignConfig::standard(Method::Bma, 3, 30).unwrap();
    let sc = &builtin_scenarios(3).unwrap()[4];
    let sim = simulate_trial(sc, &config, 11).unwrap();
    let cohorts = simulated_cohorts(&sim.trace);

    let state = deterministic_state(dir.path());
    let done = state.create_trial(config.clone(), Some(11)).unwrap().id;
    drive(&state, &done, &cohorts, 0).await;
    let partial = state.create_trial(config, Some(11)).unwrap().id;
    drive(&state, &partial, &cohorts[..cohorts.len() - 1], 0).await;
    let before = [snapshot_json(&state, &done), snapshot_json(&state, &partial)];
    drop(state);

    let reopened = deterministic_state(dir.path());
    let after = [snapshot_json(&reopened, &done), snapshot_json(&reopened, &partial)];
    assert_eq!(before, after);
    let ids: Vec<String> = reopened.list().into_iter().map(|t| t.id).collect();
    assert_eq!(ids, [done.clone(), partial.clone()]);

    // Retransmitting an acknowledged cohort after restart returns the original answer.
    let last = cohorts.len() - 2;
    let resent = reopened.record_cohort(&partial, last, &cohorts[last]).await.unwrap();
    let original: Vec<_> = reopened.events(&partial).unwrap();
    assert!(resent.events.iter().all(|r| original.contains(r)));

    drive(&reopened, &partial, &cohorts, cohorts.len() - 1).await;
    assert_eq!(logged_events(&reopened, &partial), logged_events(&reopened, &done));
}

fn copy_prefix(src: &Path, len: usize, dst_dir: &Path) {
    let bytes = std::fs::read(src).unwrap();
    std::fs::write(dst_dir.join(src.file_name().unwrap()), &bytes[..len]).unwrap();
}

#[tokio::test]
async fn any_log_prefix_recovers_to_a_valid_trial() {
    let config = DesignConfig::standard(Method::Selection, 3, 24).unwrap();
    let sc = &builtin_scenarios(3).unwrap()[3];
    let sim = simulate_trial(sc, &config, 21).unwrap();
    let cohorts = simulated_cohorts(&sim.trace);
    let full_dir = tempfile::tempdir().unwrap();
    let state = deterministic_state(full_dir.path());
    let id = state.create_trial(config, Some(21)).unwrap().id;
    drive(&state, &id, &cohorts, 0).await;
    let full_events = logged_events(&state, &id);
    let full_subjects = state.trial(&id).unwrap().state.subjects;
    drop(state);

    let log = full_dir.path().join(format!("{id}.jsonl"));
    let bytes = std::fs::read(&log).unwrap();
    let mut cuts = vec![0, 1];
    for (i, b) in bytes.iter().enumerate() {
        if *b == b'\n' {
            cuts.extend([i, i + 1, i + 2]);
        }
    }
    cuts.retain(|&c| c <= bytes.len());
    cuts.dedup();

    for cut in cuts {
        let dir = tempfile::tempdir().unwrap();
        copy_prefix(&log, cut, dir.path());
        let state = deterministic_state(dir.path());
        let Ok(view) = state.trial(&id) else {
            // Nothing of the create survived; the log is discarded.
            assert!(state.list().is_empty(), "cut {cut}");
            assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0, "cut {cut}");
            continue;
        };
        let subjects = &view.state.subjects;
        assert_eq!(subjects.as_slice(), &full_subjects[..subjects.len()], "cut {cut}");
        let events = logged_events(&state, &id);
        assert_eq!(events.as_slice(), &full_events[..events.len()], "cut {cut}");
        if view.stop.is_none() {
            assert!(view.pending.is_some(), "cut {cut}");
        }

        // Finishing the trial from the recovered state gives the original log.
        let from = view.state.cohorts;
        drive(&state, &id, &cohorts, from).await;
        assert_eq!(logged_events(&state, &id), full_events, "cut {cut}");
        drop(state);
        let reopened = deterministic_state(dir.path());
        assert_eq!(logged_events(&reopened, &id), full_events, "cut {cut}");
    }
}

#[test]
fn damaged_middle_record_refuses_to_load() {
    let dir = tempfile::tempdir().unwrap();
    let state = deterministic_state(dir.path());
    let config = DesignConfig::standard(Method::Selection, 3, 24).unwrap();
    let id = state.create_trial(config, Some(1)).unwrap().id;
    drop(state);
    let log = dir.path().join(format!("{id}.jsonl"));
    let text = std::fs::read_to_string(&log).unwrap();
    let tampered = text.replacen("\"level\":1", "\"level\":2", 1);
    assert_ne!(tampered, text);
    std::fs::write(&log, tampered).unwrap();
    assert!(AppState::open(dir.path()).is_err());
}
