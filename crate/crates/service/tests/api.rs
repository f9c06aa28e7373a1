mod common;

use axum::http::{Method, StatusCode};
use common::*;
use serde_json::json;

#[tokio::test]
async fn create_announces_the_first_startup_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let r = call(&app, Method::POST, "/trials", Some(&json!({"config": config("selection", 24)}))).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.raw);
    assert_eq!(r.body["k_start"], 6);
    assert_eq!(r.body["phase"], "startup");
    assert_eq!(r.body["pending"]["level"], 1);
    assert_eq!(r.body["pending"]["size"], 6);
    assert_eq!(r.body["pending"]["cohort_index"], 0);
    assert_eq!(r.body["seed"], 7);
    assert_eq!(r.body["safe_levels"], json!([1, 2, 3]));

    let again = call(&app, Method::POST, "/trials", Some(&json!({"config": config("selection", 24)}))).await;
    assert_ne!(again.body["id"], r.body["id"]);
    let list = call(&app, Method::GET, "/trials", None).await;
    assert_eq!(list.body.as_array().unwrap().len(), 2);
    assert_eq!(list.body[0]["id"], r.body["id"]);
}

#[tokio::test]
async fn odd_sample_size_is_rejected_with_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let r = call(&app, Method::POST, "/trials", Some(&json!({"config": config("bma", 23)}))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.body["error"]["code"], "invalid_config");
    assert_eq!(r.body["error"]["field"], "n");
    assert!(r.body["error"]["message"].as_str().unwrap().contains("even"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[tokio::test]
async fn malformed_requests_and_unknown_trials() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let r = call(&app, Method::POST, "/trials", Some(&json!({"cfg": 1}))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.body["error"]["code"], "bad_request");
    for path in ["/trials/nope", "/trials/nope/posterior", "/trials/nope/events"] {
        let r = call(&app, Method::GET, path, None).await;
        assert_eq!(r.status, StatusCode::NOT_FOUND, "{path}");
        assert_eq!(r.body["error"]["code"], "trial_not_found");
    }
    let r = call(&app, Method::POST, "/trials/nope/cohorts", Some(&cohort(0, &inactive(6)))).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

async fn new_trial(app: &axum::Router, method: &str, n: usize) -> String {
    let r = call(app, Method::POST, "/trials", Some(&json!({"config": config(method, n)}))).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.raw);
    r.body["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn safe_inactive_cohort_escalates() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = new_trial(&app, "selection", 24).await;
    let r = call(&app, Method::POST, &format!("/trials/{id}/cohorts"), Some(&cohort(0, &inactive(6)))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.raw);
    assert_eq!(r.body["decision"]["kind"], "administer");
    assert_eq!(r.body["decision"]["level"], 2);
    assert_eq!(r.body["trial"]["phase"], "startup");
    assert_eq!(r.body["trial"]["pending"]["cohort_index"], 1);
    assert!(r.body["summary"].is_null());
    let kinds: Vec<&str> = r.body["events"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["kind"].as_str().unwrap())
        .collect();
    assert_eq!(kinds, ["outcomes_recorded", "decision", "cohort_dosed"]);
}

#[tokio::test]
async fn safety_issue_moves_to_the_model_phase() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = new_trial(&app, "bma", 24).await;
    let path = format!("/trials/{id}/cohorts");
    let mut first = inactive(6);
    first[..3].fill((true, false));
    call(&app, Method::POST, &path, Some(&cohort(0, &first))).await;
    let mut second = inactive(6);
    second[3] = (true, true);
    let r = call(&app, Method::POST, &path, Some(&cohort(1, &second))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.raw);
    assert_eq!(r.body["trial"]["phase"], "model_based");
    assert_eq!(r.body["trial"]["safe_levels"], json!([1]));
    assert!(r.body["summary"]["pi"].is_array());
    let rationale = &r.body["decision"]["rationale"];
    assert_eq!(rationale["l_prime"], 1);
    for l in rationale["admissible"].as_array().unwrap() {
        assert_eq!(l, 1);
    }
}

#[tokio::test]
async fn empty_admissible_set_stops_for_futility_and_freezes_the_posterior() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = new_trial(&app, "selection", 24).await;
    let path = format!("/trials/{id}/cohorts");

    let before = call(&app, Method::GET, &format!("/trials/{id}/posterior"), None).await;
    assert_eq!(before.body["prior"], true);
    assert_eq!(before.body["frozen"], false);
    // A flat prior predictive sits close to the 0.5 target at every level.
    for p in before.body["summary"]["exceed"].as_array().unwrap() {
        let p = p.as_f64().unwrap();
        assert!(p > 0.2 && p < 0.9, "{p}");
    }

    let mut last = None;
    for seq in 0..3 {
        let r = call(&app, Method::POST, &path, Some(&cohort(seq, &inactive(6)))).await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.raw);
        last = Some(r);
    }
    let last = last.unwrap();
    assert_eq!(last.body["decision"]["kind"], "stop_futility");
    assert_eq!(last.body["decision"]["rationale"]["admissible"], json!([]));
    assert_eq!(last.body["trial"]["phase"], "stopped_futility");
    assert!(last.body["trial"]["pending"].is_null());

    let post = call(&app, Method::GET, &format!("/trials/{id}/posterior"), None).await;
    assert_eq!(post.body["prior"], false);
    assert_eq!(post.body["frozen"], true);
    assert_eq!(post.body["enrolled"], 18);
    assert_eq!(post.body["summary"], last.body["summary"]);

    let stopped = call(&app, Method::POST, &path, Some(&cohort(3, &inactive(2)))).await;
    assert_eq!(stopped.status, StatusCode::CONFLICT);
    assert_eq!(stopped.body["error"]["code"], "trial_stopped");
    let again = call(&app, Method::GET, &format!("/trials/{id}/posterior"), None).await;
    assert_eq!(again.raw, post.raw);
}

#[tokio::test]
async fn retransmission_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = new_trial(&app, "selection", 24).await;
    let path = format!("/trials/{id}/cohorts");
    let first = call(&app, Method::POST, &path, Some(&cohort(0, &inactive(6)))).await;
    let events_before = call(&app, Method::GET, &format!("/trials/{id}/events"), None).await;
    let retry = call(&app, Method::POST, &path, Some(&cohort(0, &inactive(6)))).await;
    assert_eq!(retry.status, StatusCode::OK);
    assert_eq!(retry.raw, first.raw);
    let events_after = call(&app, Method::GET, &format!("/trials/{id}/events"), None).await;
    assert_eq!(events_after.raw, events_before.raw);

    let mut other = inactive(6);
    other[0].0 = true;
    let clash = call(&app, Method::POST, &path, Some(&cohort(0, &other))).await;
    assert_eq!(clash.status, StatusCode::CONFLICT);
    assert_eq!(clash.body["error"]["code"], "seq_conflict");

    let ahead = call(&app, Method::POST, &path, Some(&cohort(5, &inactive(6)))).await;
    assert_eq!(ahead.status, StatusCode::CONFLICT);
    assert_eq!(ahead.body["error"]["code"], "seq_conflict");
}

#[tokio::test]
async fn wrong_cohort_size_leaves_the_trial_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = new_trial(&app, "blrm", 24).await;
    let before = call(&app, Method::GET, &format!("/trials/{id}"), None).await;
    let r = call(&app, Method::POST, &format!("/trials/{id}/cohorts"), Some(&cohort(0, &inactive(5)))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.body["error"]["code"], "invalid_cohort");
    let after = call(&app, Method::GET, &format!("/trials/{id}"), None).await;
    assert_eq!(after.raw, before.raw);
    let events = call(&app, Method::GET, &format!("/trials/{id}/events"), None).await;
    assert_eq!(events.body.as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn event_records_carry_seq_timestamp_kind_and_payload() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = new_trial(&app, "selection", 24).await;
    call(&app, Method::POST, &format!("/trials/{id}/cohorts"), Some(&cohort(0, &inactive(6)))).await;
    let events = call(&app, Method::GET, &format!("/trials/{id}/events"), None).await;
    let list = events.body.as_array().unwrap();
    assert_eq!(list.len(), 5);
    for (i, e) in list.iter().enumerate() {
        let mut keys: Vec<&str> = e.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["kind", "payload", "seq", "timestamp"]);
        assert_eq!(e["seq"], i);
    }
    let on_disk = std::fs::read_to_string(dir.path().join(format!("{id}.jsonl"))).unwrap();
    let parsed: Vec<serde_json::Value> =
        on_disk.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(&parsed, list);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_retransmissions_record_once() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = new_trial(&app, "selection", 24).await;
    let path = format!("/trials/{id}/cohorts");
    let body = cohort(0, &inactive(6));
    let (a, b) = tokio::join!(
        call(&app, Method::POST, &path, Some(&body)),
        call(&app, Method::POST, &path, Some(&body))
    );
    assert_eq!(a.status, StatusCode::OK);
    assert_eq!(a.raw, b.raw);
    let events = call(&app, Method::GET, &format!("/trials/{id}/events"), None).await;
    assert_eq!(events.body.as_array().unwrap().len(), 5);
}
