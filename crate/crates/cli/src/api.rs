//! REST surface for launching runs and deciding surface-mode alerts.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use companion_core::intervention::{Alert, AlertError, AlertQueue, AlertState, Decision};
use companion_core::record::{RunWriter, RUN_SCHEMA_VERSION};
use companion_core::{
    run_header, run_session_observed, CompanionConfig, Condition, RunEvent, RunRecord, RunStatus,
    Sampling, SessionBackends, SessionConfig, StepRecord, Task, Timing,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::SharedFactory;

pub const API_VERSION: u32 = 1;

struct RunEntry {
    record: Mutex<Option<RunRecord>>,
    alerts: Arc<AlertQueue>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    runs: RwLock<BTreeMap<String, Arc<RunEntry>>>,
    factory: SharedFactory,
    runs_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(factory: SharedFactory, runs_dir: Option<PathBuf>) -> Self {
        Self {
            inner: Arc::new(Inner {
                runs: RwLock::new(BTreeMap::new()),
                factory,
                runs_dir,
            }),
        }
    }

    fn run(&self, id: &str) -> Option<Arc<RunEntry>> {
        self.inner
            .runs
            .read()
            .expect("run table poisoned")
            .get(id)
            .cloned()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/alerts", get(list_alerts))
        .route("/alerts/{id}/decision", post(decide))
        .with_state(state)
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

impl From<AlertError> for ApiError {
    fn from(e: AlertError) -> Self {
        let (status, code) = match e {
            AlertError::NotFound(_) => (StatusCode::NOT_FOUND, "NOT_FOUND"),
            AlertError::Conflict { .. } => (StatusCode::CONFLICT, "CONFLICT"),
            AlertError::EditRequiresGuidance => {
                (StatusCode::UNPROCESSABLE_ENTITY, "EDIT_REQUIRES_GUIDANCE")
            }
        };
        ApiError::new(status, code, e.to_string())
    }
}

/// `Json` whose rejections use the API error body.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(e) => Err(ApiError::new(e.status(), "INVALID_REQUEST", e.body_text())),
        }
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "api_version": API_VERSION,
        "run_schema_version": RUN_SCHEMA_VERSION,
    }))
}

fn default_steps() -> u32 {
    6
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_steps")]
    pub n_steps: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub companion: CompanionConfig,
    #[serde(default)]
    pub agent_sampling: Sampling,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_steps: default_steps(),
            seed: 0,
            companion: CompanionConfig::default(),
            agent_sampling: Sampling::agent(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateRun {
    pub task: Task,
    pub condition: Condition,
    #[serde(default)]
    pub config: RunConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunCreated {
    pub run_id: String,
}

fn invalid(message: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "INVALID_REQUEST", message)
}

async fn create_run(
    State(state): State<AppState>,
    ApiJson(req): ApiJson<CreateRun>,
) -> Result<(StatusCode, Json<RunCreated>), ApiError> {
    req.task.validate().map_err(|e| invalid(e.to_string()))?;
    let companion = req
        .config
        .companion
        .clone()
        .validate()
        .map_err(|e| invalid(e.to_string()))?;
    if req.config.n_steps == 0 {
        return Err(invalid("n_steps must be >= 1"));
    }
    req.config
        .agent_sampling
        .validate()
        .map_err(|e| invalid(e.to_string()))?;

    let factory = state.inner.factory.clone();
    let agent = factory
        .agent(&req.task, req.condition, req.config.seed)
        .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, "BACKEND_ERROR", e.to_string()))?;
    let alerts = Arc::new(AlertQueue::new());
    let backends = SessionBackends {
        agent,
        judge: factory.judge(),
        probe: factory.probe(),
        alerts: Some(alerts.clone()),
    };
    let run_id = format!("run-{}", uuid::Uuid::new_v4().simple());
    let cfg = SessionConfig {
        run_id: run_id.clone(),
        task: req.task,
        condition: req.condition,
        n_steps: req.config.n_steps,
        companion,
        agent_sampling: req.config.agent_sampling,
        seed: req.config.seed,
    };
    let entry = Arc::new(RunEntry {
        record: Mutex::new(Some(RunRecord::new(run_header(&cfg, &backends)))),
        alerts,
    });
    state
        .inner
        .runs
        .write()
        .expect("run table poisoned")
        .insert(run_id.clone(), entry.clone());

    let runs_dir = state.inner.runs_dir.clone();
    tokio::task::spawn_blocking(move || {
        let mut writer: Option<RunWriter> = None;
        let mut observer = |event: &RunEvent| {
            let mut slot = entry.record.lock().expect("run record poisoned");
            match event {
                RunEvent::Header(h) => {
                    *slot = Some(RunRecord::new(h.clone()));
                    if let Some(dir) = &runs_dir {
                        writer = RunWriter::create(dir, h)
                            .map_err(|e| log::error!("cannot persist run {}: {e}", h.run_id))
                            .ok();
                    }
                }
                e => {
                    if let Some(r) = slot.as_mut() {
                        r.events.push(e.clone());
                    }
                    if let Some(w) = writer.as_mut() {
                        if let Err(err) = w.append(e) {
                            log::error!("persisting event failed: {err}");
                        }
                    }
                }
            }
        };
        if let Err(failure) = run_session_observed(&cfg, &backends, &mut observer) {
            log::warn!("{failure}");
        }
    });
    Ok((StatusCode::CREATED, Json(RunCreated { run_id })))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunSummaryView {
    pub run_id: String,
    pub task_id: String,
    pub condition: Condition,
    pub status: RunStatus,
    pub steps: usize,
}

async fn list_runs(State(state): State<AppState>) -> Json<Vec<RunSummaryView>> {
    let runs = state.inner.runs.read().expect("run table poisoned");
    let views = runs
        .iter()
        .filter_map(|(id, entry)| {
            let slot = entry.record.lock().expect("run record poisoned");
            let r = slot.as_ref()?;
            Some(RunSummaryView {
                run_id: id.clone(),
                task_id: r.header.task.id.clone(),
                condition: r.header.condition,
                status: r.status(),
                steps: r.steps().count(),
            })
        })
        .collect();
    Json(views)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunView {
    pub run_id: String,
    pub status: RunStatus,
    pub task: Task,
    pub condition: Condition,
    pub steps: Vec<StepRecord>,
    pub events: Vec<RunEvent>,
    pub timing: Option<Timing>,
}

fn not_found(what: &str, id: &str) -> ApiError {
    ApiError::new(
        StatusCode::NOT_FOUND,
        "NOT_FOUND",
        format!("no {what} with id `{id}`"),
    )
}

async fn get_run(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<RunView>, ApiError> {
    let entry = state.run(&id).ok_or_else(|| not_found("run", &id))?;
    let slot = entry.record.lock().expect("run record poisoned");
    let view = match slot.as_ref() {
        Some(r) => RunView {
            run_id: id,
            status: r.status(),
            task: r.header.task.clone(),
            condition: r.header.condition,
            steps: r.steps().map(|(s, _)| s.clone()).collect(),
            events: r.events.clone(),
            timing: r.timing().cloned(),
        },
        None => {
            return Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "STARTING",
                "run has not started yet",
            ))
        }
    };
    Ok(Json(view))
}

#[derive(Debug, Deserialize)]
pub struct AlertFilter {
    pub state: Option<String>,
}

async fn list_alerts(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(filter): Query<AlertFilter>,
) -> Result<Json<Vec<Alert>>, ApiError> {
    let entry = state.run(&id).ok_or_else(|| not_found("run", &id))?;
    let wanted = filter
        .state
        .map(|s| {
            s.parse::<AlertState>()
                .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "BAD_STATE", e))
        })
        .transpose()?;
    Ok(Json(entry.alerts.list(wanted)))
}

async fn decide(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ApiJson(decision): ApiJson<Decision>,
) -> Result<Json<Alert>, ApiError> {
    let entries: Vec<Arc<RunEntry>> = state
        .inner
        .runs
        .read()
        .expect("run table poisoned")
        .values()
        .cloned()
        .collect();
    let entry = entries
        .into_iter()
        .find(|e| e.alerts.get(&id).is_some())
        .ok_or_else(|| not_found("alert", &id))?;
    Ok(Json(entry.alerts.decide(&id, &decision)?))
}
