//! HTTP/JSON facade over scenario management, runs and comparisons.
//!
//! Scenarios are stored by id (the bundled one as `health_inequity`,
//! uploads by content hash). Runs go through a bounded worker pool and are
//! kept in memory, append-only; completed runs never change. Payloads use
//! the same serializations as the files the CLI writes.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use capsim::decision::AggregationMode;
use capsim::dynamics::{run_with, RunOptions, RunReport};
use capsim::evaluation::{compare, compute_metrics, EquityMetrics};
use capsim::scenario::{load_scenario, to_toml, ScenarioError, ScenarioSpec, Violation};
use capsim::{bundled, report};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Runs executing at once.
    pub workers: usize,
    /// Runs allowed to wait for a worker; further submissions get 429.
    pub queue: usize,
    /// When set, each completed run is also written under `<dir>/<run id>/`.
    pub persist_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { workers: 2, queue: 32, persist_dir: None }
    }
}

struct StoredScenario {
    spec: ScenarioSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Queued,
    Running,
    Completed,
    Failed,
}

struct RunEntry {
    request: RunRequest,
    status: RunStatus,
    outcome: Option<Result<Arc<(RunReport, EquityMetrics)>, String>>,
}

pub struct AppState {
    config: ServiceConfig,
    scenarios: RwLock<BTreeMap<String, Arc<StoredScenario>>>,
    runs: RwLock<HashMap<String, RunEntry>>,
    next_run: AtomicU64,
    in_flight: AtomicUsize,
    workers: Arc<Semaphore>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        let bundled_spec = bundled::health_inequity();
        let scenarios = BTreeMap::from([(bundled::HEALTH_INEQUITY.to_string(), Arc::new(StoredScenario { spec: bundled_spec }))]);
        Arc::new(AppState {
            workers: Arc::new(Semaphore::new(config.workers.max(1))),
            config,
            scenarios: RwLock::new(scenarios),
            runs: RwLock::new(HashMap::new()),
            next_run: AtomicU64::new(1),
            in_flight: AtomicUsize::new(0),
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/scenarios", post(upload_scenario).get(list_scenarios))
        .route("/scenarios/{id}", get(get_scenario))
        .route("/runs", post(submit_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/metrics", get(get_metrics))
        .route("/compare", post(compare_runs))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(config))).await
}

pub struct ApiError {
    status: StatusCode,
    message: String,
    violations: Vec<Violation>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), violations: Vec::new() }
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown {what} `{id}`"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message, "status": self.status.as_u16() });
        if !self.violations.is_empty() {
            body["violations"] = json!(self.violations);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UploadRequest {
    source: String,
}

fn scenario_id(source: &str) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(source.as_bytes());
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("sc-{hex}")
}

async fn upload_scenario(State(state): State<Arc<AppState>>, Json(req): Json<UploadRequest>) -> ApiResult<(StatusCode, Json<Value>)> {
    let spec = load_scenario(req.source.as_bytes()).map_err(|e| {
        let violations = match e {
            ScenarioError::Validation(v) => v,
            ScenarioError::Parse { line, column, message } => {
                vec![Violation { path: format!("line {line}, column {column}"), message }]
            }
        };
        ApiError { status: StatusCode::BAD_REQUEST, message: "scenario is invalid".into(), violations }
    })?;
    let id = scenario_id(&req.source);
    let name = spec.name.clone();
    state.scenarios.write().unwrap().insert(id.clone(), Arc::new(StoredScenario { spec }));
    Ok((StatusCode::CREATED, Json(json!({ "id": id, "name": name, "violations": [] }))))
}

async fn list_scenarios(State(state): State<Arc<AppState>>) -> Json<Value> {
    let list: Vec<Value> = state
        .scenarios
        .read()
        .unwrap()
        .iter()
        .map(|(id, s)| json!({ "id": id, "name": s.spec.name, "norms": s.spec.norms.len(), "actions": s.spec.actions.len() }))
        .collect();
    Json(json!({ "scenarios": list }))
}

fn find_scenario(state: &AppState, id: &str) -> ApiResult<Arc<StoredScenario>> {
    state.scenarios.read().unwrap().get(id).cloned().ok_or_else(|| ApiError::not_found("scenario", id))
}

async fn get_scenario(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let stored = find_scenario(&state, &id)?;
    Ok(Json(json!({
        "id": id,
        "name": stored.spec.name,
        "norms": stored.spec.norms,
        "actions": stored.spec.action_names(),
        "scenario": stored.spec,
        "canonical_toml": to_toml(&stored.spec),
    })))
}

/// `true`/`false` or `"enabled"`/`"disabled"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Toggle {
    Flag(bool),
    Word(ToggleWord),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ToggleWord {
    Enabled,
    Disabled,
}

impl Toggle {
    fn enabled(self) -> bool {
        matches!(self, Toggle::Flag(true) | Toggle::Word(ToggleWord::Enabled))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    scenario_id: String,
    #[serde(default)]
    norm_overrides: BTreeMap<String, Toggle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aggregation: Option<AggregationMode>,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    horizon: Option<u32>,
}

impl RunRequest {
    fn overrides(&self) -> BTreeMap<String, bool> {
        self.norm_overrides.iter().map(|(k, v)| (k.clone(), v.enabled())).collect()
    }
}

/// Releases an in-flight slot when the run finishes or is rejected.
struct Slot(Arc<AppState>);

impl Drop for Slot {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn submit_run(State(state): State<Arc<AppState>>, Json(req): Json<RunRequest>) -> ApiResult<(StatusCode, Json<Value>)> {
    let stored = find_scenario(&state, &req.scenario_id)?;
    let spec = stored
        .spec
        .with_norm_overrides(&req.overrides())
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    if let Some(mode) = req.aggregation {
        mode.check().map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e))?;
    }

    let limit = state.config.workers.max(1) + state.config.queue;
    if state.in_flight.fetch_add(1, Ordering::SeqCst) >= limit {
        state.in_flight.fetch_sub(1, Ordering::SeqCst);
        return Err(ApiError::new(StatusCode::TOO_MANY_REQUESTS, format!("run queue is full ({limit} runs in flight)")));
    }
    let slot = Slot(Arc::clone(&state));

    let id = format!("run-{}", state.next_run.fetch_add(1, Ordering::SeqCst));
    state
        .runs
        .write()
        .unwrap()
        .insert(id.clone(), RunEntry { request: req.clone(), status: RunStatus::Queued, outcome: None });

    let task_state = Arc::clone(&state);
    let task_id = id.clone();
    tokio::spawn(async move {
        let _slot = slot;
        let _permit = task_state.workers.clone().acquire_owned().await.expect("semaphore is never closed");
        set_status(&task_state, &task_id, RunStatus::Running);
        let opts = RunOptions { horizon: req.horizon, aggregation: req.aggregation, ..Default::default() };
        let seed = req.seed;
        let persist = task_state.config.persist_dir.as_ref().map(|d| d.join(&task_id));
        let outcome = tokio::task::spawn_blocking(move || {
            let report = run_with(&spec, seed, &opts).map_err(|e| e.to_string())?;
            let metrics = compute_metrics(&report, &spec);
            if let Some(dir) = persist {
                report::write_run(&dir, &report, &metrics, &spec).map_err(|e| format!("persisting run: {e}"))?;
            }
            Ok(Arc::new((report, metrics)))
        })
        .await
        .unwrap_or_else(|e| Err(format!("run panicked: {e}")));
        let mut runs = task_state.runs.write().unwrap();
        let entry = runs.get_mut(&task_id).expect("runs are never removed");
        entry.status = if outcome.is_ok() { RunStatus::Completed } else { RunStatus::Failed };
        entry.outcome = Some(outcome);
    });

    Ok((StatusCode::ACCEPTED, Json(json!({ "id": id, "status": RunStatus::Queued }))))
}

fn set_status(state: &AppState, id: &str, status: RunStatus) {
    if let Some(entry) = state.runs.write().unwrap().get_mut(id) {
        entry.status = status;
    }
}

fn summary(report: &RunReport) -> Value {
    let mut actions: BTreeMap<&str, u64> = BTreeMap::new();
    let mut realised = 0u64;
    for e in &report.events {
        let name = e.action.map_or(capsim::dynamics::NOOP, |a| report.actions[a.0].as_str());
        *actions.entry(name).or_default() += 1;
        realised += u64::from(e.realised);
    }
    json!({
        "scenario": report.scenario,
        "seed": report.seed,
        "horizon": report.horizon,
        "aggregation": report.aggregation,
        "norms": report.norms,
        "agents": report.final_agents.len(),
        "events": report.events.len(),
        "realised": realised,
        "chosen_actions": actions,
        "expenses": report.final_world.expenses,
    })
}

async fn get_run(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let runs = state.runs.read().unwrap();
    let entry = runs.get(&id).ok_or_else(|| ApiError::not_found("run", &id))?;
    let mut body = json!({ "id": id, "status": entry.status, "request": entry.request });
    match &entry.outcome {
        Some(Ok(done)) => body["summary"] = summary(&done.0),
        Some(Err(e)) => body["error"] = json!(e),
        None => {}
    }
    Ok(Json(body))
}

fn completed(state: &AppState, id: &str) -> ApiResult<Arc<(RunReport, EquityMetrics)>> {
    let runs = state.runs.read().unwrap();
    let entry = runs.get(id).ok_or_else(|| ApiError::not_found("run", id))?;
    match &entry.outcome {
        None => Err(ApiError::new(StatusCode::CONFLICT, format!("run `{id}` is still executing"))),
        Some(Err(e)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("run `{id}` failed: {e}"))),
        Some(Ok(done)) => Ok(Arc::clone(done)),
    }
}

async fn get_metrics(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<EquityMetrics>> {
    Ok(Json(completed(&state, &id)?.1.clone()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareRequest {
    a: String,
    b: String,
}

async fn compare_runs(State(state): State<Arc<AppState>>, Json(req): Json<CompareRequest>) -> ApiResult<Json<Value>> {
    let a = completed(&state, &req.a)?;
    let b = completed(&state, &req.b)?;
    let delta = compare(&a.1, &b.1).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    Ok(Json(serde_json::to_value(delta).expect("delta serializes")))
}
