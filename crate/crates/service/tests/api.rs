use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use capsim::bundled;
use capsim::dynamics::{run_with, RunOptions};
use capsim::evaluation::compute_metrics;
use capsim_service::{router, AppState, ServiceConfig};

fn app() -> Router {
    router(AppState::new(ServiceConfig::default()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = builder.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn submit(app: &Router, body: Value) -> String {
    let (status, v) = call(app, "POST", "/runs", Some(body)).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

async fn wait(app: &Router, id: &str) -> Value {
    for _ in 0..2000 {
        let (status, v) = call(app, "GET", &format!("/runs/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        if v["status"] == "completed" || v["status"] == "failed" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("run {id} did not finish");
}

async fn metrics(app: &Router, id: &str) -> Value {
    wait(app, id).await;
    let (status, v) = call(app, "GET", &format!("/runs/{id}/metrics"), None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    v
}

fn bodily_health(m: &Value) -> f64 {
    m["capabilities"]["bodily_health"]["deprivation_ratio"].as_f64().unwrap()
}

#[tokio::test]
async fn bundled_scenario_lists_its_norms() {
    let app = app();
    let (status, v) = call(&app, "GET", "/scenarios/health_inequity", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["norms"][0]["id"], "registration_gate");
    assert_eq!(v["norms"][0]["enabled"], true);
    assert_eq!(v["actions"].as_array().unwrap().len(), 2);
    let (status, _) = call(&app, "GET", "/scenarios/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn upload_validates() {
    let app = app();
    let (status, v) = call(&app, "POST", "/scenarios", Some(json!({ "source": bundled::HEALTH_INEQUITY_TOML }))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v["violations"], json!([]));
    let id = v["id"].as_str().unwrap();
    let (status, _) = call(&app, "GET", &format!("/scenarios/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);

    let broken = bundled::HEALTH_INEQUITY_TOML.replace("pain_relief = 1.0", "warmth = 1.0");
    let (status, v) = call(&app, "POST", "/scenarios", Some(json!({ "source": broken }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["violations"].to_string().contains("warmth"), "{v}");

    let (status, v) = call(&app, "POST", "/scenarios", Some(json!({ "source": "format_version = [" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["violations"][0]["path"].as_str().unwrap().starts_with("line 1"));
}

#[tokio::test]
async fn reform_run_and_compare() {
    let app = app();
    let base = submit(&app, json!({ "scenario_id": "health_inequity", "seed": 42 })).await;
    let reform = submit(
        &app,
        json!({ "scenario_id": "health_inequity", "seed": 42, "norm_overrides": { "registration_gate": "disabled" } }),
    )
    .await;
    let (mb, mr) = (metrics(&app, &base).await, metrics(&app, &reform).await);
    assert_eq!(bodily_health(&mr), 0.0);

    let (_, run) = call(&app, "GET", &format!("/runs/{base}"), None).await;
    assert_eq!(run["summary"]["agents"], 1000);
    let share = bodily_health(&mb);
    assert!(share > 0.3 && share < 0.5);

    let (status, delta) = call(&app, "POST", "/compare", Some(json!({ "a": base, "b": reform }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(delta["capabilities"]["bodily_health"]["deprivation_ratio"].as_f64().unwrap(), -share);
    assert_eq!(delta["capabilities"]["bodily_health"]["verdict"], "improved");
}

#[tokio::test]
async fn identical_requests_give_identical_metrics() {
    let app = app();
    let body = json!({ "scenario_id": "health_inequity", "seed": 3, "horizon": 2 });
    let a = submit(&app, body.clone()).await;
    let b = submit(&app, body).await;
    assert_ne!(a, b);
    let ma = metrics(&app, &a).await;
    assert_eq!(ma, metrics(&app, &b).await);
    // Completed runs are immutable.
    assert_eq!(ma, metrics(&app, &a).await);
}

#[tokio::test]
async fn service_metrics_equal_library_metrics() {
    let app = app();
    let id = submit(
        &app,
        json!({
            "scenario_id": "health_inequity",
            "seed": 9,
            "aggregation": { "mode": "weighted", "weight": 0.3 },
            "norm_overrides": { "registration_gate": false }
        }),
    )
    .await;
    let served = metrics(&app, &id).await;

    let spec = bundled::health_inequity()
        .with_norm_overrides(&[(bundled::REGISTRATION_GATE.to_string(), false)].into())
        .unwrap();
    let opts = RunOptions {
        aggregation: Some(capsim::AggregationMode::Weighted { weight: 0.3 }),
        ..Default::default()
    };
    let local = compute_metrics(&run_with(&spec, 9, &opts).unwrap(), &spec);
    let local: Value = serde_json::from_str(&capsim::report::to_json(&local)).unwrap();
    assert_eq!(served, local);
}

#[tokio::test]
async fn request_errors() {
    let app = app();
    let (status, _) = call(&app, "POST", "/runs", Some(json!({ "scenario_id": "missing", "seed": 1 }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, v) =
        call(&app, "POST", "/runs", Some(json!({ "scenario_id": "health_inequity", "seed": 1, "norm_overrides": { "curfew": true } }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("curfew"));
    let (status, _) = call(
        &app,
        "POST",
        "/runs",
        Some(json!({ "scenario_id": "health_inequity", "seed": 1, "aggregation": { "mode": "weighted", "weight": 2.0 } })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "GET", "/runs/run-999", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/runs/run-999/metrics", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/compare", Some(json!({ "a": "run-1", "b": "run-2" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

/// A population big enough that a run is still executing when the next
/// request arrives.
async fn upload_large(app: &Router) -> String {
    let source = bundled::HEALTH_INEQUITY_TOML.replace("n = 1000", "n = 200000");
    let (status, v) = call(app, "POST", "/scenarios", Some(json!({ "source": source }))).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn metrics_conflict_while_running() {
    let app = app();
    let scenario = upload_large(&app).await;
    let id = submit(&app, json!({ "scenario_id": scenario, "seed": 1 })).await;
    let (status, v) = call(&app, "GET", &format!("/runs/{id}/metrics"), None).await;
    assert_eq!(status, StatusCode::CONFLICT, "{v}");
    let (status, v) = call(&app, "POST", "/compare", Some(json!({ "a": id, "b": id }))).await;
    assert_eq!(status, StatusCode::CONFLICT, "{v}");
}

#[tokio::test]
async fn full_queue_is_rejected() {
    let app = router(AppState::new(ServiceConfig { workers: 1, queue: 1, persist_dir: None }));
    let scenario = upload_large(&app).await;
    submit(&app, json!({ "scenario_id": scenario, "seed": 1 })).await;
    submit(&app, json!({ "scenario_id": scenario, "seed": 2 })).await;
    let (status, _) = call(&app, "POST", "/runs", Some(json!({ "scenario_id": scenario, "seed": 3 }))).await;
    assert_eq!(status, StatusCode::TOO_MANY_REQUESTS);
}

#[tokio::test]
async fn completed_runs_are_persisted() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_path_buf();
    let app = router(AppState::new(ServiceConfig { persist_dir: Some(dir.clone()), ..Default::default() }));
    let id = submit(&app, json!({ "scenario_id": "health_inequity", "seed": 5, "horizon": 1 })).await;
    let served = metrics(&app, &id).await;
    let written: Value = serde_json::from_slice(&std::fs::read(dir.join(&id).join("metrics.json")).unwrap()).unwrap();
    assert_eq!(served, written);
}
