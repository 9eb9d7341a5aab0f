//! HTTP front end for live deployment: chat, feedback collection and retraining.

mod log;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use juicer_core::corpus::{corpus_stats, Conversation, CorpusStats, ErrorMode, Label, Oracle, Turn, WorldSpec};
use juicer_core::dialogue::{DialogueModel, Responder};
use juicer_core::eval::EvalReport;
use juicer_core::pipeline::{run_juicer, PipelineConfig, RunInputs, RunReport, RunStatus};
use juicer_core::CoreError;
use serde::{Deserialize, Serialize};

pub use log::{latest_snapshots, ConversationLog};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Errors surfaced to HTTP clients as `{"error": ...}` bodies.
#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Conflict(String),
    Unprocessable(String),
    Internal(String),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn message(&self) -> &str {
        match self {
            ApiError::BadRequest(m)
            | ApiError::NotFound(m)
            | ApiError::Conflict(m)
            | ApiError::Unprocessable(m)
            | ApiError::Internal(m) => m,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.message() });
        (self.status(), Json(body)).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, Deserialize)]
pub struct ChatRequest {
    pub session_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatResponse {
    pub session_id: String,
    pub reply: String,
    pub turn_index: usize,
    pub model_version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackKind {
    Up,
    Down,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FeedbackRequest {
    pub session_id: String,
    pub turn_index: usize,
    pub kind: FeedbackKind,
    #[serde(default)]
    pub feedback_text: Option<String>,
    #[serde(default)]
    pub gold_correction: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub session_id: String,
    pub label: Label,
    /// The bot's second attempt, produced when textual feedback was given.
    pub reply: Option<String>,
    pub reply_turn_index: Option<usize>,
    pub model_version: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrainResponse {
    pub run_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunView {
    pub run_id: String,
    pub status: RunStatus,
    pub model_version: Option<String>,
    pub error: Option<String>,
    pub report: Option<RunReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsResponse {
    pub model_version: String,
    pub corpus: CorpusStats,
    pub last_eval: Option<EvalReport>,
}

pub struct ServiceConfig {
    pub log_path: PathBuf,
    pub runs_dir: PathBuf,
    pub world: WorldSpec,
    /// Historical corpus that every retrain starts from.
    pub base_corpus: Vec<Conversation>,
    pub pipeline: PipelineConfig,
}

struct Served {
    model: Arc<DialogueModel>,
    version: String,
}

type Session = Arc<tokio::sync::Mutex<Conversation>>;

pub struct AppState {
    cfg: ServiceConfig,
    oracle: Oracle,
    log: ConversationLog,
    sessions: Mutex<BTreeMap<String, Session>>,
    served: RwLock<Served>,
    versions: AtomicU64,
    retraining: AtomicBool,
    runs: Mutex<BTreeMap<String, RunView>>,
    run_counter: AtomicU64,
    last_eval: Mutex<Option<EvalReport>>,
}

impl AppState {
    /// Opens the log, restoring every session it holds, and serves `model` as `v0`.
    pub fn new(cfg: ServiceConfig, model: DialogueModel) -> Result<Arc<Self>, ServiceError> {
        let (log, restored) = ConversationLog::open(&cfg.log_path)?;
        let sessions = restored
            .into_iter()
            .map(|c| (c.conversation_id.clone(), Arc::new(tokio::sync::Mutex::new(c))))
            .collect();
        Ok(Arc::new(AppState {
            oracle: Oracle::new(&cfg.world),
            cfg,
            log,
            sessions: Mutex::new(sessions),
            served: RwLock::new(Served {
                model: Arc::new(model),
                version: "v0".into(),
            }),
            versions: AtomicU64::new(0),
            retraining: AtomicBool::new(false),
            runs: Mutex::new(BTreeMap::new()),
            run_counter: AtomicU64::new(0),
            last_eval: Mutex::new(None),
        }))
    }

    pub fn model_version(&self) -> String {
        self.served.read().expect("model lock poisoned").version.clone()
    }

    fn current_model(&self) -> (Arc<DialogueModel>, String) {
        let s = self.served.read().expect("model lock poisoned");
        (s.model.clone(), s.version.clone())
    }

    fn session(&self, id: &str) -> Option<Session> {
        self.sessions.lock().expect("session map poisoned").get(id).cloned()
    }

    fn session_or_create(&self, id: &str) -> Session {
        let mut map = self.sessions.lock().expect("session map poisoned");
        map.entry(id.to_string())
            .or_insert_with(|| {
                Arc::new(tokio::sync::Mutex::new(Conversation {
                    conversation_id: id.to_string(),
                    topic: "live".into(),
                    turns: Vec::new(),
                }))
            })
            .clone()
    }

    /// Latest state of every live conversation that has at least one exchange.
    pub async fn export(&self) -> Vec<Conversation> {
        let sessions: Vec<Session> = self.sessions.lock().expect("session map poisoned").values().cloned().collect();
        let mut out = Vec::with_capacity(sessions.len());
        for s in sessions {
            let c = s.lock().await;
            if !c.turns.is_empty() {
                out.push(c.clone());
            }
        }
        out
    }

    pub fn run(&self, id: &str) -> Option<RunView> {
        self.runs.lock().expect("run map poisoned").get(id).cloned()
    }
}

async fn reply_to(model: Arc<DialogueModel>, context: Vec<Turn>) -> Result<String, ApiError> {
    tokio::task::spawn_blocking(move || model.reply(&context))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map_err(ApiError::from)
}

fn non_empty(s: Option<String>) -> Option<String> {
    s.map(|t| t.trim().to_string()).filter(|t| !t.is_empty())
}

async fn chat(State(state): State<Arc<AppState>>, Json(req): Json<ChatRequest>) -> ApiResult<ChatResponse> {
    let text = req.text.trim();
    if text.is_empty() {
        return Err(ApiError::BadRequest("text must be non-empty".into()));
    }
    if req.session_id.trim().is_empty() {
        return Err(ApiError::BadRequest("session_id must be non-empty".into()));
    }
    let session = state.session_or_create(&req.session_id);
    let mut conv = session.lock().await;
    let (model, version) = state.current_model();
    let mut next = conv.clone();
    next.turns.push(Turn::human(text, false));
    let reply = reply_to(model, next.turns.clone()).await?;
    next.turns.push(Turn::bot(reply.clone(), Label::Unlabeled, ErrorMode::None));
    state.log.append(&next)?;
    *conv = next;
    Ok(Json(ChatResponse {
        session_id: req.session_id,
        reply,
        turn_index: conv.turns.len() - 1,
        model_version: version,
    }))
}

async fn feedback(State(state): State<Arc<AppState>>, Json(req): Json<FeedbackRequest>) -> ApiResult<FeedbackResponse> {
    let text = non_empty(req.feedback_text);
    let gold = non_empty(req.gold_correction);
    if req.kind == FeedbackKind::Up && (text.is_some() || gold.is_some()) {
        return Err(ApiError::Unprocessable(
            "feedback text and corrections only accompany a thumbs-down".into(),
        ));
    }
    let session = state
        .session(&req.session_id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown session {:?}", req.session_id)))?;
    let mut conv = session.lock().await;
    let last = conv.turns.len().checked_sub(1);
    if last != Some(req.turn_index) || !conv.turns[req.turn_index].is_bot() {
        return Err(ApiError::Conflict(format!(
            "turn {} is not the latest bot turn of the session",
            req.turn_index
        )));
    }
    if conv.turns[req.turn_index].label() != Label::Unlabeled {
        return Err(ApiError::Conflict(format!("turn {} already has feedback", req.turn_index)));
    }

    let mut next = conv.clone();
    let i = req.turn_index;
    let (model, version) = state.current_model();
    let mut second = None;
    match req.kind {
        FeedbackKind::Up => next.turns[i].label = Some(Label::HumanUp),
        FeedbackKind::Down => {
            next.turns[i].label = Some(Label::HumanDown);
            next.turns[i].gold_correction = gold;
            if let Some(fb) = text {
                let mode = match state.oracle.diagnose(&next.turns[..i], &next.turns[i].text) {
                    ErrorMode::None => ErrorMode::Irrelevant,
                    m => m,
                };
                next.turns[i].error_mode = Some(mode);
                next.turns.push(Turn::human(fb, true));
                let reply = reply_to(model, next.turns.clone()).await?;
                next.turns.push(Turn::bot(reply.clone(), Label::Unlabeled, ErrorMode::None));
                second = Some((reply, next.turns.len() - 1));
            }
        }
    }
    state.log.append(&next)?;
    let label = next.turns[i].label();
    *conv = next;
    Ok(Json(FeedbackResponse {
        session_id: req.session_id,
        label,
        reply_turn_index: second.as_ref().map(|s| s.1),
        reply: second.map(|s| s.0),
        model_version: version,
    }))
}

/// Clears the retrain flag however the background run ends.
struct RetrainGuard(Arc<AppState>);

impl Drop for RetrainGuard {
    fn drop(&mut self) {
        self.0.retraining.store(false, Ordering::SeqCst);
    }
}

async fn retrain(State(state): State<Arc<AppState>>) -> Result<(StatusCode, Json<RetrainResponse>), ApiError> {
    if state
        .retraining
        .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
        .is_err()
    {
        return Err(ApiError::Conflict("run in progress".into()));
    }
    let guard = RetrainGuard(state.clone());
    let live = state.export().await;
    if live.is_empty() {
        return Err(ApiError::BadRequest("no conversations have been logged yet".into()));
    }
    let n = state.run_counter.fetch_add(1, Ordering::SeqCst) + 1;
    let run_id = format!("run-{n:04}");
    state.runs.lock().expect("run map poisoned").insert(
        run_id.clone(),
        RunView {
            run_id: run_id.clone(),
            status: RunStatus::Pending,
            model_version: None,
            error: None,
            report: None,
        },
    );
    let id = run_id.clone();
    tokio::spawn(async move {
        let state = guard.0.clone();
        set_status(&state, &id, |r| r.status = RunStatus::Running);
        let out_dir = state.cfg.runs_dir.join(&id);
        let worker = state.clone();
        let result = tokio::task::spawn_blocking(move || train_and_load(&worker, live, &out_dir)).await;
        match result {
            Ok(Ok((report, model))) => {
                let v = worker_version(&state);
                let eval = report.metrics.arms.first().map(|a| a.test.clone());
                *state.served.write().expect("model lock poisoned") = Served {
                    model: Arc::new(model),
                    version: v.clone(),
                };
                *state.last_eval.lock().expect("eval lock poisoned") = eval;
                set_status(&state, &id, |r| {
                    r.status = RunStatus::Done;
                    r.model_version = Some(v);
                    r.report = Some(report);
                });
            }
            Ok(Err(e)) => set_status(&state, &id, |r| {
                r.status = RunStatus::Failed;
                r.error = Some(e.to_string());
            }),
            Err(e) => set_status(&state, &id, |r| {
                r.status = RunStatus::Failed;
                r.error = Some(e.to_string());
            }),
        }
        drop(guard);
    });
    Ok((StatusCode::ACCEPTED, Json(RetrainResponse { run_id })))
}

fn worker_version(state: &AppState) -> String {
    format!("v{}", state.versions.fetch_add(1, Ordering::SeqCst) + 1)
}

fn set_status(state: &AppState, id: &str, f: impl FnOnce(&mut RunView)) {
    if let Some(r) = state.runs.lock().expect("run map poisoned").get_mut(id) {
        f(r);
    }
}

fn train_and_load(
    state: &AppState,
    live: Vec<Conversation>,
    out_dir: &std::path::Path,
) -> Result<(RunReport, DialogueModel), ServiceError> {
    let inputs = RunInputs {
        world: state.cfg.world.clone(),
        corpus: state.cfg.base_corpus.clone(),
        extra_train: live,
    };
    let report = run_juicer(&state.cfg.pipeline, &inputs, out_dir)?;
    let arm = report
        .metrics
        .arms
        .first()
        .ok_or_else(|| CoreError::InvalidInput("run produced no final model".into()))?;
    let path = report
        .artifacts
        .get(&format!("arm/{}/model", arm.name))
        .ok_or_else(|| CoreError::InvalidInput("run report lists no model artifact".into()))?;
    let (model, _) = DialogueModel::load(std::path::Path::new(path))?;
    Ok((report, model))
}

async fn run_status(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<RunView> {
    state
        .run(&id)
        .map(Json)
        .ok_or_else(|| ApiError::NotFound(format!("unknown run {id:?}")))
}

async fn stats(State(state): State<Arc<AppState>>) -> ApiResult<StatsResponse> {
    let live = state.export().await;
    Ok(Json(StatsResponse {
        model_version: state.model_version(),
        corpus: corpus_stats(&live),
        last_eval: state.last_eval.lock().expect("eval lock poisoned").clone(),
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/chat", post(chat))
        .route("/feedback", post(feedback))
        .route("/retrain", post(retrain))
        .route("/runs/{id}", get(run_status))
        .route("/stats", get(stats))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}
