//! HTTP/JSON front end for a single live teaching session.
//!
//! A visit is split over three requests: `POST /episodes` assesses the
//! frames, `POST /label` learns from them and picks norm questions, and
//! `POST /answers` records the teacher's replies. Reads are served from a
//! snapshot that is replaced only after a mutation has fully succeeded.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use normscene_core::{
    load_episode, save_kb, DeonticOperator, Episode, FeatureVector, KnowledgeBase, Norm, Question, Verdict,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Mutex;
use tower_http::cors::CorsLayer;

/// Inline episode bodies larger than this are rejected.
pub const MAX_EPISODE_BYTES: usize = 10 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Processing,
    AwaitingLabel,
    AwaitingAnswers,
}

/// The visit currently in flight. Frames are held only until the label step.
#[derive(Debug, Clone)]
struct Pending {
    episode: Episode,
    verdict: Verdict,
    novel_fraction: f64,
    predicted_label: Option<String>,
    context: Option<String>,
    questions: Vec<Question>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PendingView {
    pub episode_id: String,
    pub verdict: Verdict,
    pub novel_fraction: f64,
    pub predicted_label: Option<String>,
    pub context: Option<String>,
    pub questions: Vec<Question>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub phase: Phase,
    pub pending: Option<PendingView>,
    pub categories: Vec<String>,
    pub episodes_seen: u64,
    pub norms: usize,
}

struct Writer {
    kb: KnowledgeBase,
    phase: Phase,
    pending: Option<Pending>,
    submitted: u64,
}

struct Snapshot {
    kb: Arc<KnowledgeBase>,
    session: SessionView,
}

pub struct Service {
    session_id: String,
    save_path: Option<PathBuf>,
    writer: Mutex<Writer>,
    snapshot: RwLock<Arc<Snapshot>>,
}

pub type SharedService = Arc<Service>;

impl Service {
    /// `save_path` is where `POST /kb/save` writes when the request names no path.
    pub fn new(kb: KnowledgeBase, save_path: Option<PathBuf>) -> SharedService {
        let session_id = format!("session-{:016x}", normscene_core::rng::derive_seed(kb.seed, &[kb.episodes_seen]));
        let writer = Writer {
            kb,
            phase: Phase::Idle,
            pending: None,
            submitted: 0,
        };
        let snapshot = RwLock::new(Arc::new(snapshot_of(&session_id, &writer)));
        Arc::new(Service {
            session_id,
            save_path,
            writer: Mutex::new(writer),
            snapshot,
        })
    }

    fn publish(&self, w: &Writer) {
        let snap = Arc::new(snapshot_of(&self.session_id, w));
        *self.snapshot.write().expect("snapshot lock") = snap;
    }

    fn read(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Current knowledge base as last published.
    pub fn knowledge_base(&self) -> Arc<KnowledgeBase> {
        self.read().kb.clone()
    }

    pub fn session(&self) -> SessionView {
        self.read().session.clone()
    }
}

fn snapshot_of(session_id: &str, w: &Writer) -> Snapshot {
    Snapshot {
        kb: Arc::new(w.kb.clone()),
        session: SessionView {
            session_id: session_id.to_string(),
            phase: w.phase,
            pending: w.pending.as_ref().map(|p| PendingView {
                episode_id: p.episode.id.clone(),
                verdict: p.verdict,
                novel_fraction: p.novel_fraction,
                predicted_label: p.predicted_label.clone(),
                context: p.context.clone(),
                questions: p.questions.clone(),
            }),
            categories: w.kb.learning_order.clone(),
            episodes_seen: w.kb.episodes_seen,
            norms: w.kb.norms.len(),
        },
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn wrong_phase(phase: Phase, wanted: Phase) -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "wrong_phase",
            format!("session is {}, expected {}", phase_name(phase), phase_name(wanted)),
        )
    }

    fn unknown_episode(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_episode", format!("no pending episode `{id}`"))
    }

    fn internal(e: normscene_core::Error) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Idle => "idle",
        Phase::Processing => "processing",
        Phase::AwaitingLabel => "awaiting_label",
        Phase::AwaitingAnswers => "awaiting_answers",
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "code": self.code, "message": self.message });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: Result<Bytes, BytesRejection>) -> Result<T, ApiError> {
    let bytes = body.map_err(|r| {
        let status = r.status();
        let code = if status == StatusCode::PAYLOAD_TOO_LARGE { "payload_too_large" } else { "bad_request" };
        ApiError::new(status, code, r.body_text())
    })?;
    serde_json::from_slice(&bytes).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeRequest {
    pub episode_id: Option<String>,
    pub frames: Option<Vec<Vec<f64>>>,
    /// Episode file readable by the server.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EpisodeResponse {
    pub episode_id: String,
    pub verdict: Verdict,
    pub novel_fraction: f64,
    pub predicted_label: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRequest {
    pub episode_id: String,
    pub label: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelResponse {
    pub episode_id: String,
    pub label: String,
    pub new_category: bool,
    pub questions: Vec<Question>,
    pub phase: Phase,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerItem {
    pub action: String,
    #[serde(default = "permissible")]
    pub operator: DeonticOperator,
    pub answer: bool,
}

fn permissible() -> DeonticOperator {
    DeonticOperator::Permissible
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswersRequest {
    pub episode_id: String,
    pub answers: Vec<AnswerItem>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NormsResponse {
    pub context: Option<String>,
    pub norms: Vec<Norm>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaveRequest {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
pub struct NormsQuery {
    pub context: Option<String>,
}

fn build_episode(req: EpisodeRequest, dim: usize, submitted: u64) -> Result<Episode, ApiError> {
    let mut episode = match (req.frames, req.path) {
        (Some(frames), None) => {
            let frames = frames
                .into_iter()
                .map(FeatureVector::new)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ApiError::bad_request(e.to_string()))?;
            let id = req.episode_id.clone().unwrap_or_else(|| format!("episode-{}", submitted + 1));
            Episode::new(id, frames).map_err(|e| ApiError::bad_request(e.to_string()))?
        }
        (None, Some(path)) => load_episode(&path, dim).map_err(|e| ApiError::bad_request(e.to_string()))?,
        _ => return Err(ApiError::bad_request("give exactly one of `frames` or `path`")),
    };
    if let Some(id) = req.episode_id {
        episode.id = id;
    }
    episode.check_dim(dim).map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(episode)
}

async fn post_episode(State(svc): State<SharedService>, body: Result<Bytes, BytesRejection>) -> ApiResult<EpisodeResponse> {
    let mut w = svc.writer.lock().await;
    if w.phase != Phase::Idle {
        return Err(ApiError::wrong_phase(w.phase, Phase::Idle));
    }
    let req: EpisodeRequest = parse_body(body)?;
    let episode = build_episode(req, w.kb.dim, w.submitted)?;

    w.phase = Phase::Processing;
    svc.publish(&w);
    let assessment = match w.kb.assess(&episode.frames) {
        Ok(a) => a,
        Err(e) => {
            w.phase = Phase::Idle;
            svc.publish(&w);
            return Err(ApiError::bad_request(e.to_string()));
        }
    };

    let response = EpisodeResponse {
        episode_id: episode.id.clone(),
        verdict: assessment.novelty.verdict,
        novel_fraction: assessment.novelty.novel_fraction,
        predicted_label: assessment.predicted_label.clone(),
    };
    w.submitted += 1;
    w.pending = Some(Pending {
        episode,
        verdict: assessment.novelty.verdict,
        novel_fraction: assessment.novelty.novel_fraction,
        predicted_label: assessment.predicted_label,
        context: None,
        questions: Vec::new(),
    });
    w.phase = Phase::AwaitingLabel;
    svc.publish(&w);
    Ok(Json(response))
}

async fn post_label(State(svc): State<SharedService>, body: Result<Bytes, BytesRejection>) -> ApiResult<LabelResponse> {
    let mut w = svc.writer.lock().await;
    if w.phase != Phase::AwaitingLabel {
        return Err(ApiError::wrong_phase(w.phase, Phase::AwaitingLabel));
    }
    let req: LabelRequest = parse_body(body)?;
    let pending = w.pending.as_ref().expect("pending episode while awaiting a label");
    if pending.episode.id != req.episode_id {
        return Err(ApiError::unknown_episode(&req.episode_id));
    }
    let label = req.label.trim().to_string();
    if label.is_empty() {
        return Err(ApiError::bad_request("label must not be empty"));
    }

    let mut next = w.kb.clone();
    let report = next
        .learn(&label, &pending.episode.frames)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let questions = next.questions_for(&label, None).map_err(ApiError::internal)?;
    w.kb = next;

    let mut pending = w.pending.take().expect("checked above");
    // The frames are not needed past this point.
    pending.episode.frames = Vec::new();
    pending.context = Some(label.clone());
    pending.questions = questions.clone();
    let episode_id = pending.episode.id.clone();
    if questions.is_empty() {
        w.phase = Phase::Idle;
    } else {
        w.pending = Some(pending);
        w.phase = Phase::AwaitingAnswers;
    }
    svc.publish(&w);
    Ok(Json(LabelResponse {
        episode_id,
        label,
        new_category: report.new_category,
        questions,
        phase: w.phase,
    }))
}

async fn post_answers(State(svc): State<SharedService>, body: Result<Bytes, BytesRejection>) -> ApiResult<NormsResponse> {
    let mut w = svc.writer.lock().await;
    if w.phase != Phase::AwaitingAnswers {
        return Err(ApiError::wrong_phase(w.phase, Phase::AwaitingAnswers));
    }
    let req: AnswersRequest = parse_body(body)?;
    let pending = w.pending.as_ref().expect("pending episode while awaiting answers");
    if pending.episode.id != req.episode_id {
        return Err(ApiError::unknown_episode(&req.episode_id));
    }
    let mut answers: Vec<(Question, bool)> = Vec::with_capacity(req.answers.len());
    for item in req.answers {
        let q = Question {
            action: item.action,
            operator: item.operator,
        };
        if !pending.questions.contains(&q) {
            return Err(ApiError::bad_request(format!("`{q}` was not asked")));
        }
        if answers.iter().any(|(a, _)| *a == q) {
            return Err(ApiError::bad_request(format!("`{q}` answered twice")));
        }
        answers.push((q, item.answer));
    }
    let context = pending.context.clone().expect("context set at label step");

    let mut next = w.kb.clone();
    let norms = next
        .record_answers(&context, &answers)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    w.kb = next;
    w.pending = None;
    w.phase = Phase::Idle;
    svc.publish(&w);
    Ok(Json(NormsResponse {
        context: Some(context),
        norms,
    }))
}

async fn post_save(State(svc): State<SharedService>, body: Result<Bytes, BytesRejection>) -> ApiResult<Value> {
    let req: SaveRequest = match body {
        Ok(b) if b.iter().all(u8::is_ascii_whitespace) => SaveRequest::default(),
        other => parse_body(other)?,
    };
    let path = req
        .path
        .or_else(|| svc.save_path.clone())
        .ok_or_else(|| ApiError::bad_request("no save path configured; pass `path`"))?;
    // Hold the writer so the saved file matches a committed state.
    let _w = svc.writer.lock().await;
    let kb = svc.knowledge_base();
    save_kb(&kb, &path).map_err(ApiError::internal)?;
    Ok(Json(serde_json::json!({ "path": path, "episodes_seen": kb.episodes_seen })))
}

async fn get_kb(State(svc): State<SharedService>) -> Response {
    let kb = svc.knowledge_base();
    ([(axum::http::header::CONTENT_TYPE, "application/json")], kb.to_json()).into_response()
}

async fn get_norms(State(svc): State<SharedService>, Query(q): Query<NormsQuery>) -> Json<NormsResponse> {
    let kb = svc.knowledge_base();
    let norms = match &q.context {
        Some(c) => kb.norms.query_norms(c).into_iter().cloned().collect(),
        None => kb.norms.iter().cloned().collect(),
    };
    Json(NormsResponse { context: q.context, norms })
}

async fn get_session(State(svc): State<SharedService>) -> Json<SessionView> {
    Json(svc.session())
}

pub fn router(service: SharedService) -> Router {
    Router::new()
        .route("/episodes", post(post_episode))
        .route("/label", post(post_label))
        .route("/answers", post(post_answers))
        .route("/kb/save", post(post_save))
        .route("/kb", get(get_kb))
        .route("/norms", get(get_norms))
        .route("/session", get(get_session))
        .layer(DefaultBodyLimit::max(MAX_EPISODE_BYTES))
        .layer(CorsLayer::permissive())
        .with_state(service)
}

/// Serves until the process is stopped.
pub async fn serve(service: SharedService, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(service)).await
}
