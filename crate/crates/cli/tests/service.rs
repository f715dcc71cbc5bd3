use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use companion_cli::api::{router, AppState};
use companion_cli::config::BackendsConfig;
use companion_core::experiment::ScriptedSuiteConfig;
use companion_core::record::load_run;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(agent_latency_ms: u64, runs_dir: Option<std::path::PathBuf>) -> Router {
    let cfg = BackendsConfig::Scripted(ScriptedSuiteConfig {
        agent_latency_ms,
        ..ScriptedSuiteConfig::default()
    });
    router(AppState::new(cfg.build().unwrap(), runs_dir))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn loop_task() -> Value {
    json!({
        "id": "loop-api",
        "description": "Decide whether the team should adopt a four day work week",
        "category": "LOOP_PRONE"
    })
}

async fn wait_for_status(app: &Router, run_id: &str, want: &str) -> Value {
    let deadline = Instant::now() + Duration::from_secs(30);
    loop {
        let (code, view) = call(app, "GET", &format!("/runs/{run_id}"), None).await;
        assert_eq!(code, StatusCode::OK);
        if view["status"] == want {
            return view;
        }
        assert!(
            Instant::now() < deadline,
            "run never reached {want}: {view}"
        );
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_reports_versions() {
    let (code, body) = call(&app(0, None), "GET", "/health", None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["run_schema_version"], 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn run_moves_from_running_to_complete() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(50, Some(dir.path().to_path_buf()));
    let (code, created) = call(
        &app,
        "POST",
        "/runs",
        Some(json!({"task": loop_task(), "condition": "LLM_COMPANION", "config": {"n_steps": 4}})),
    )
    .await;
    assert_eq!(code, StatusCode::CREATED);
    let run_id = created["run_id"].as_str().unwrap().to_string();

    let (_, first) = call(&app, "GET", &format!("/runs/{run_id}"), None).await;
    assert_eq!(first["status"], "RUNNING");

    let (_, list) = call(&app, "GET", "/runs", None).await;
    assert!(list
        .as_array()
        .unwrap()
        .iter()
        .any(|r| r["run_id"] == run_id.as_str()));

    let view = wait_for_status(&app, &run_id, "COMPLETE").await;
    assert_eq!(view["steps"].as_array().unwrap().len(), 4);
    assert!(view["timing"]["t_agent"].as_f64().unwrap() > 0.0);

    let persisted = load_run(&dir.path().join(format!("{run_id}.jsonl"))).unwrap();
    assert_eq!(persisted.steps().count(), 4);
    assert_eq!(
        serde_json::to_value(&persisted.events).unwrap(),
        view["events"]
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn approved_surface_alert_reaches_a_later_prompt() {
    let app = app(150, None);
    let body = json!({
        "task": loop_task(),
        "condition": "LLM_COMPANION",
        "config": {"n_steps": 6, "companion": {"mode": "SURFACE"}}
    });
    let (code, created) = call(&app, "POST", "/runs", Some(body)).await;
    assert_eq!(code, StatusCode::CREATED);
    let run_id = created["run_id"].as_str().unwrap().to_string();

    let deadline = Instant::now() + Duration::from_secs(30);
    let alert = loop {
        let (code, alerts) = call(
            &app,
            "GET",
            &format!("/runs/{run_id}/alerts?state=PENDING"),
            None,
        )
        .await;
        assert_eq!(code, StatusCode::OK);
        if let Some(a) = alerts.as_array().unwrap().first() {
            break a.clone();
        }
        assert!(Instant::now() < deadline, "no alert was raised");
        tokio::time::sleep(Duration::from_millis(5)).await;
    };
    assert_eq!(alert["detection"]["status"], "LOOPING");
    let alert_id = alert["id"].as_str().unwrap();

    let (code, decided) = call(
        &app,
        "POST",
        &format!("/alerts/{alert_id}/decision"),
        Some(json!({"action": "edit", "guidance": "Commit to a recommendation now."})),
    )
    .await;
    assert_eq!(code, StatusCode::OK, "{decided}");
    assert_eq!(decided["state"], "EDITED");

    let (code, again) = call(
        &app,
        "POST",
        &format!("/alerts/{alert_id}/decision"),
        Some(json!({"action": "approve"})),
    )
    .await;
    assert_eq!(code, StatusCode::CONFLICT);
    assert_eq!(again["error"]["code"], "CONFLICT");

    let view = wait_for_status(&app, &run_id, "COMPLETE").await;
    let (_, alerts) = call(&app, "GET", &format!("/runs/{run_id}/alerts"), None).await;
    let applied = alerts
        .as_array()
        .unwrap()
        .iter()
        .find(|a| a["id"] == alert_id)
        .unwrap()["applied_at_step"]
        .as_u64()
        .expect("edited alert was applied");
    let at_step = alert["at_step"].as_u64().unwrap();
    assert!(applied > at_step);
    let step = &view["steps"][(applied - 1) as usize];
    assert!(step["prompt"]
        .as_str()
        .unwrap()
        .contains("(Before continuing, consider: Commit to a recommendation now.)"));
    for earlier in &view["steps"].as_array().unwrap()[..(applied - 1) as usize] {
        assert!(!earlier["prompt"]
            .as_str()
            .unwrap()
            .contains("Commit to a recommendation"));
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn error_responses() {
    let app = app(0, None);
    let (code, body) = call(
        &app,
        "POST",
        "/alerts/nope/decision",
        Some(json!({"action": "approve"})),
    )
    .await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "NOT_FOUND");

    let (code, _) = call(&app, "GET", "/runs/missing", None).await;
    assert_eq!(code, StatusCode::NOT_FOUND);

    let (code, created) = call(
        &app,
        "POST",
        "/runs",
        Some(json!({"task": loop_task(), "condition": "BASELINE"})),
    )
    .await;
    assert_eq!(code, StatusCode::CREATED);
    let run_id = created["run_id"].as_str().unwrap();
    let (code, body) = call(
        &app,
        "GET",
        &format!("/runs/{run_id}/alerts?state=WAITING"),
        None,
    )
    .await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "BAD_STATE");

    let (code, body) = call(
        &app,
        "POST",
        "/runs",
        Some(json!({"task": loop_task(), "condition": "BASELINE", "config": {"n_steps": 0}})),
    )
    .await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "INVALID_REQUEST");

    let bad_threshold = json!({
        "task": loop_task(),
        "condition": "PROBE_COMPANION",
        "config": {"companion": {"probe_threshold": 1.5}}
    });
    let (code, _) = call(&app, "POST", "/runs", Some(bad_threshold)).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
}
