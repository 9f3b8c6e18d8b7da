//! HTTP API over the session engine and metrics store.
//!
//! All endpoints live under `/v1/` and exchange JSON, except scenario
//! upload which takes the scenario file text as the request body. Every
//! error response has the shape `{"code", "message", "seq"?, "field"?}`.

use std::collections::HashMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;
use trainforge_core::engine::{EngineConfig, EngineError, Prompt, SessionMode, SessionState, StepOutcome};
use trainforge_core::model::{EventKind, SessionEvent, SessionMetrics, SessionStart, StepResult};
use trainforge_core::parser::{parse_scenario_report, ParseDiagnostic};
use trainforge_core::report::{build_report, ReportError, SessionFilter};
use trainforge_core::store::{MetricsStore, PutOutcome, StoreError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<ParseDiagnostic>,
}

impl ApiError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.to_string(),
            message: message.into(),
            seq: None,
            field: None,
            diagnostics: vec![],
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(400, "invalid-request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(500, "internal", message)
    }
}

/// HTTP status for a machine code.
pub fn status_for(code: &str) -> u16 {
    match code {
        "not-found" | "empty-cohort" => 404,
        "sequence-gap" | "seq-conflict" | "session-ended" | "session-active" | "scenario-conflict"
        | "incomplete-log" => 409,
        "invalid-request" => 400,
        "corrupt-log" | "io-error" | "internal" => 500,
        _ => 422,
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let mut api = ApiError::new(status_for(e.code()), e.code(), e.to_string());
        if let EngineError::SequenceGap { expected, .. } = e {
            api.seq = Some(expected);
            api.field = Some("seq".into());
        }
        api
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let mut api = ApiError::new(status_for(e.code()), e.code(), e.to_string());
        match e {
            StoreError::SeqConflict { seq, .. } => api.seq = Some(seq),
            StoreError::SequenceGap { expected, .. } => api.seq = Some(expected),
            _ => {}
        }
        api
    }
}

impl From<ReportError> for ApiError {
    fn from(e: ReportError) -> Self {
        ApiError::new(status_for(e.code()), e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Synthesize StepTimedOut when a prompt outlives its time limit.
    pub enforce_timeouts: bool,
    /// Extra wall time allowed past the limit before timing out.
    pub timeout_grace: Duration,
    /// Static files served at `/` (the browser player).
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { enforce_timeouts: true, timeout_grace: Duration::from_millis(250), ui_dir: None }
    }
}

struct LiveSession {
    state: SessionState,
}

type SessionHandle = Arc<tokio::sync::Mutex<LiveSession>>;

#[derive(Clone)]
pub struct AppState {
    store: Arc<MetricsStore>,
    sessions: Arc<Mutex<HashMap<String, SessionHandle>>>,
    config: Arc<ServiceConfig>,
}

impl AppState {
    pub fn new(store: Arc<MetricsStore>, config: ServiceConfig) -> Self {
        AppState { store, sessions: Arc::default(), config: Arc::new(config) }
    }

    pub fn store(&self) -> &Arc<MetricsStore> {
        &self.store
    }

    /// Session from memory, or rebuilt from its stored log.
    async fn session(&self, id: &str) -> Result<SessionHandle, ApiError> {
        if let Some(h) = self.sessions.lock().expect("session map poisoned").get(id) {
            return Ok(h.clone());
        }
        let store = self.store.clone();
        let sid = id.to_string();
        let state = tokio::task::spawn_blocking(move || hydrate(&store, &sid))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??;
        let open_step = state.open_step().map(|o| (o.prompt.step_index, o.prompt.time_limit_s));
        let handle = {
            let mut map = self.sessions.lock().expect("session map poisoned");
            map.entry(id.to_string())
                .or_insert_with(|| Arc::new(tokio::sync::Mutex::new(LiveSession { state })))
                .clone()
        };
        if let Some((step_index, limit)) = open_step {
            self.schedule_timeout(id.to_string(), step_index, limit);
        }
        Ok(handle)
    }

    /// Applies an event to a copy of the state, persists it, then commits.
    async fn apply(&self, live: &mut LiveSession, event: SessionEvent) -> Result<Applied, ApiError> {
        let mut next = live.state.clone();
        let outcome = next.submit_event(&event)?;
        let store = self.store.clone();
        let ev = event.clone();
        let finished = next.is_ended().then(|| next.finalize()).transpose()?;
        let to_store = finished.clone();
        tokio::task::spawn_blocking(move || -> Result<(), StoreError> {
            store.append_event(&ev)?;
            if let Some(m) = &to_store {
                store.put_metrics(m)?;
            }
            Ok(())
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
        live.state = next;
        if let (EventKind::PromptShown { .. }, Some(open)) = (&event.kind, live.state.open_step()) {
            self.schedule_timeout(event.session_id.clone(), open.prompt.step_index, open.prompt.time_limit_s);
        }
        Ok(Applied { outcome, metrics: finished })
    }

    fn schedule_timeout(&self, session_id: String, step_index: usize, limit_s: f64) {
        if !self.config.enforce_timeouts {
            return;
        }
        let app = self.clone();
        let wait = Duration::from_secs_f64(limit_s.max(0.0)) + self.config.timeout_grace;
        tokio::spawn(async move {
            tokio::time::sleep(wait).await;
            let Ok(handle) = app.session(&session_id).await else { return };
            let mut live = handle.lock().await;
            let Some(open) = live.state.open_step() else { return };
            if open.prompt.step_index != step_index || live.state.is_ended() {
                return;
            }
            let ts = (open.shown_at + open.prompt.time_limit_s).max(live.state.last_timestamp());
            let event = SessionEvent::new(
                &session_id,
                live.state.next_seq(),
                ts,
                EventKind::StepTimedOut { step_id: open.prompt.step_id.clone() },
            );
            let _ = app.apply(&mut live, event).await;
        });
    }
}

struct Applied {
    outcome: Option<StepOutcome>,
    metrics: Option<SessionMetrics>,
}

fn hydrate(store: &MetricsStore, session_id: &str) -> Result<SessionState, ApiError> {
    let bundle = store.load_trace(session_id)?;
    let scenario = store.scenario(&bundle.scenario_id, bundle.scenario_version)?;
    let mut state = SessionState::new(scenario, bundle.seed, SessionMode::Live, EngineConfig::default())
        .with_session_id(session_id);
    for ev in &bundle.events {
        state.submit_event(ev).map_err(|e| {
            let mut api = ApiError::from(e);
            api.seq = Some(ev.seq);
            api
        })?;
    }
    Ok(state)
}

pub fn router(app: AppState) -> Router {
    let ui_dir = app.config.ui_dir.clone();
    let api = Router::new()
        .route("/v1/health", get(health))
        .route("/v1/scenarios", post(create_scenario).get(list_scenarios))
        .route("/v1/scenarios/{id}", get(get_scenario))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/events", post(post_event))
        .route("/v1/sessions/{id}/metrics", get(get_metrics))
        .route("/v1/reports", get(get_report))
        .with_state(app);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async { ApiError::new(404, "not-found", "no such endpoint") }),
    }
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(app)).with_graceful_shutdown(shutdown).await
}

type ApiResult = Result<(StatusCode, Json<Value>), ApiError>;

fn ok(status: StatusCode, body: impl Serialize) -> ApiResult {
    Ok((status, Json(serde_json::to_value(body).map_err(|e| ApiError::internal(e.to_string()))?)))
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn create_scenario(State(app): State<AppState>, body: Bytes) -> ApiResult {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::new(422, "invalid-scenario", "body is not UTF-8"))?;
    let report = parse_scenario_report(text);
    let Some(scenario) = report.scenario else {
        let mut err = ApiError::new(422, "invalid-scenario", "scenario file has errors");
        err.diagnostics = report.diagnostics;
        return Err(err);
    };
    let store = app.store.clone();
    let s = scenario.clone();
    let put = tokio::task::spawn_blocking(move || store.put_scenario(&s))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let status = if put == PutOutcome::Created { StatusCode::CREATED } else { StatusCode::OK };
    ok(
        status,
        json!({
            "scenario_id": scenario.id(),
            "version": scenario.version(),
            "created": put == PutOutcome::Created,
            "warnings": report.diagnostics,
        }),
    )
}

async fn list_scenarios(State(app): State<AppState>) -> ApiResult {
    let list: Vec<Value> =
        app.store.scenario_keys().into_iter().map(|(id, v)| json!({ "scenario_id": id, "version": v })).collect();
    ok(StatusCode::OK, json!({ "scenarios": list }))
}

#[derive(Deserialize)]
struct VersionQuery {
    version: Option<u32>,
}

async fn get_scenario(
    State(app): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<VersionQuery>, QueryRejection>,
) -> ApiResult {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let scenario = match q.version {
        Some(v) => app.store.scenario(&id, v)?,
        None => app.store.latest_scenario(&id)?,
    };
    ok(StatusCode::OK, &*scenario)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    scenario_id: String,
    #[serde(default)]
    scenario_version: Option<u32>,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct SessionView {
    session_id: String,
    scenario_id: String,
    scenario_version: u32,
    seed: u64,
    next_seq: u64,
    ended: bool,
    difficulty: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt: Option<Prompt>,
    /// Whether `prompt` is already on screen (PromptShown was accepted).
    prompt_open: bool,
    eligible_steps: Vec<String>,
    step_results: Vec<StepResult>,
}

fn view(state: &SessionState) -> SessionView {
    SessionView {
        session_id: state.session_id().to_string(),
        scenario_id: state.scenario().id().to_string(),
        scenario_version: state.scenario().version(),
        seed: state.seed(),
        next_seq: state.next_seq(),
        ended: state.is_ended(),
        difficulty: state.difficulty().level(),
        prompt: state.next_prompt().ok(),
        prompt_open: state.open_step().is_some(),
        eligible_steps: if state.open_step().is_some() { vec![] } else { state.eligible_steps() },
        step_results: state.step_results().to_vec(),
    }
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> ApiResult {
    let req: CreateSession = parse_json(&body)?;
    let scenario = match req.scenario_version {
        Some(v) => app.store.scenario(&req.scenario_id, v)?,
        None => app.store.latest_scenario(&req.scenario_id)?,
    };
    let seed = req.seed.unwrap_or_else(rand::random);
    let state = SessionState::new(scenario.clone(), seed, SessionMode::Live, EngineConfig::default());
    let id = state.session_id().to_string();
    let start = SessionEvent::new(
        &id,
        0,
        0.0,
        EventKind::SessionStarted(SessionStart {
            scenario_id: scenario.id().to_string(),
            scenario_version: scenario.version(),
            seed,
            wall_clock: None,
        }),
    );
    let mut live = LiveSession { state };
    app.apply(&mut live, start).await?;
    let body = view(&live.state);
    app.sessions.lock().expect("session map poisoned").insert(id, Arc::new(tokio::sync::Mutex::new(live)));
    ok(StatusCode::CREATED, body)
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let handle = app.session(&id).await?;
    let live = handle.lock().await;
    ok(StatusCode::OK, view(&live.state))
}

/// Event body; `session_id` may be omitted since the path names it.
#[derive(Deserialize)]
struct EventBody {
    #[serde(default)]
    session_id: Option<String>,
    seq: u64,
    timestamp_s: f64,
    #[serde(flatten)]
    kind: EventKind,
}

async fn post_event(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let req: EventBody = parse_json(&body)?;
    let handle = app.session(&id).await?;
    let mut live = handle.lock().await;
    let event = SessionEvent::new(req.session_id.unwrap_or_else(|| id.clone()), req.seq, req.timestamp_s, req.kind);
    if event.session_id != id {
        return Err(ApiError::new(422, "session-mismatch", "event session_id does not match the path"));
    }
    let applied = app.apply(&mut live, event).await?;
    let state = &live.state;
    ok(
        StatusCode::OK,
        json!({
            "outcome": applied.outcome,
            "next_seq": state.next_seq(),
            "ended": state.is_ended(),
            "difficulty": state.difficulty().level(),
            "prompt": state.next_prompt().ok(),
            "metrics": applied.metrics,
        }),
    )
}

async fn get_metrics(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let handle = app.session(&id).await?;
    let live = handle.lock().await;
    ok(StatusCode::OK, live.state.finalize()?)
}

#[derive(Deserialize)]
struct ReportQuery {
    scenario_id: Option<String>,
    version: Option<u32>,
}

async fn get_report(State(app): State<AppState>, query: Result<Query<ReportQuery>, QueryRejection>) -> ApiResult {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let filter = SessionFilter { scenario_id: q.scenario_id, scenario_version: q.version };
    let store = app.store.clone();
    let report = tokio::task::spawn_blocking(move || build_report(&store, &filter))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    ok(StatusCode::OK, report)
}
