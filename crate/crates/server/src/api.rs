//! HTTP+JSON routes.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use heteroglossia_core::distance::{DistanceError, Metric};
use heteroglossia_core::engine::{Engine, EngineError, RankedIdeaView, SubmitOutcome};
use heteroglossia_core::orchestrator::{OrchestratorError, RejectionReason, Strategy, TaskRequest};
use heteroglossia_core::workspace::{CharacterPatch, CommentThread, Document, Edit, TeamPatch, WorkspaceError};
use heteroglossia_core::{
    CharacterId, DocumentId, ManualClock, SlotId, SubmissionId, TaskId, TeamId, ThreadId, Timestamp, WorkerId,
};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::auth::{authenticate, idempotency_key, valid_token, Auth, WORKER_TOKEN_HEADER};
use crate::journal::JournalSink;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<RwLock<Engine>>,
    pub journal: Option<JournalSink>,
    pub writer_key: Arc<str>,
    pub manual_clock: Option<Arc<ManualClock>>,
    pub default_quota: u32,
    pub snapshot_every: u64,
    pub last_snapshot: Arc<AtomicU64>,
}

impl AppState {
    /// Runs a mutation under the engine lock, compacting the log when due.
    fn mutate<T>(&self, f: impl FnOnce(&mut Engine) -> Result<T, EngineError>) -> Result<T, ApiError> {
        let mut engine = self.engine.write();
        let out = f(&mut engine)?;
        if let Some(journal) = &self.journal {
            let seq = engine.seq();
            if seq - self.last_snapshot.load(Ordering::Relaxed) >= self.snapshot_every {
                match journal.snapshot(engine.state(), seq, engine.now()) {
                    Ok(()) => self.last_snapshot.store(seq, Ordering::Relaxed),
                    Err(e) => tracing::warn!("snapshot failed: {e}"),
                }
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// errors

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
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        use StatusCode as S;
        let message = e.to_string();
        let (status, code) = match &e {
            EngineError::Storage(_) => (S::SERVICE_UNAVAILABLE, "STORAGE_UNAVAILABLE"),
            EngineError::Workspace(w) => match w {
                WorkspaceError::NotFound { .. } => (S::NOT_FOUND, "NOT_FOUND"),
                _ => (S::UNPROCESSABLE_ENTITY, "INVALID"),
            },
            EngineError::Orchestrator(o) => match o {
                OrchestratorError::NotFound { .. } => (S::NOT_FOUND, "NOT_FOUND"),
                OrchestratorError::UnknownTeam(_)
                | OrchestratorError::DeletedCharacterInTeam(_)
                | OrchestratorError::InvalidSelection(_)
                | OrchestratorError::InvalidQuota => (S::UNPROCESSABLE_ENTITY, "INVALID"),
                OrchestratorError::NoWorkAvailable => (S::NOT_FOUND, "NO_WORK_AVAILABLE"),
                OrchestratorError::AlreadyActive(_) => (S::CONFLICT, "ALREADY_ACTIVE"),
                OrchestratorError::AlreadyWorkedTask(_) => (S::CONFLICT, "ALREADY_WORKED_TASK"),
                OrchestratorError::NotClaimant => (S::FORBIDDEN, "NOT_CLAIMANT"),
                OrchestratorError::BadState(_) => (S::CONFLICT, "BAD_STATE"),
                OrchestratorError::NoIdeasYet => (S::CONFLICT, "NO_IDEAS_YET"),
            },
            EngineError::Distance(DistanceError::MetricUnavailable(_)) => (S::BAD_REQUEST, "METRIC_UNAVAILABLE"),
            EngineError::Distance(_) => (S::UNPROCESSABLE_ENTITY, "DISTANCE"),
        };
        ApiError::new(status, code, message)
    }
}

type ApiResult<T> = Result<T, ApiError>;

// ---------------------------------------------------------------------------
// callers

pub struct Writer;

impl FromRequestParts<AppState> for Writer {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        match authenticate(&parts.headers, &state.writer_key) {
            Auth::Writer => Ok(Writer),
            Auth::Worker(_) => Err(ApiError::new(StatusCode::FORBIDDEN, "FORBIDDEN", "writer credentials required")),
            Auth::Denied => Err(ApiError::new(StatusCode::UNAUTHORIZED, "UNAUTHORIZED", "missing or wrong writer key")),
        }
    }
}

pub struct Worker {
    pub id: WorkerId,
    pub idempotency_key: Option<String>,
}

impl FromRequestParts<AppState> for Worker {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _state: &AppState) -> Result<Self, Self::Rejection> {
        let token = parts.headers.get(WORKER_TOKEN_HEADER).and_then(|v| v.to_str().ok());
        match token {
            Some(t) if valid_token(t) => Ok(Worker {
                id: WorkerId::new(t),
                idempotency_key: idempotency_key(&parts.headers),
            }),
            Some(_) => Err(ApiError::new(StatusCode::UNAUTHORIZED, "UNAUTHORIZED", "malformed worker token")),
            None => Err(ApiError::new(StatusCode::UNAUTHORIZED, "UNAUTHORIZED", "worker token required")),
        }
    }
}

// ---------------------------------------------------------------------------
// request and response bodies

#[derive(Deserialize)]
pub struct NewCharacter {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub image_ref: Option<String>,
}

#[derive(Deserialize)]
pub struct NewTeam {
    pub name: String,
    pub member_ids: Vec<CharacterId>,
}

#[derive(Deserialize)]
pub struct NewDocument {
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub body: String,
}

#[derive(Deserialize)]
pub struct NewThread {
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub overview: String,
}

#[derive(Deserialize)]
pub struct NewReply {
    #[serde(default = "writer_label")]
    pub author_label: String,
    pub body: String,
}

fn writer_label() -> String {
    "writer".into()
}

#[derive(Deserialize)]
pub struct NewTask {
    pub start: usize,
    pub end: usize,
    pub team_id: TeamId,
    #[serde(default)]
    pub note: Option<String>,
    #[serde(default = "role_play")]
    pub strategy: Strategy,
    #[serde(default, alias = "per_character_quota")]
    pub quota: Option<u32>,
}

fn role_play() -> Strategy {
    Strategy::RolePlay
}

#[derive(Serialize)]
pub struct DocumentView {
    pub document: Document,
    pub threads: Vec<CommentThread>,
}

#[derive(Deserialize)]
pub struct RankQuery {
    pub rank: Option<String>,
}

#[derive(Deserialize)]
pub struct SubmitBody {
    pub body: String,
}

/// What a worker learns about a submission.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SubmitResponse {
    Accepted {
        submission_id: SubmissionId,
        slot_id: SlotId,
        task_id: TaskId,
        role_label: String,
        reward_cents: u64,
        submitted_at: Timestamp,
    },
    Rejected {
        slot_id: SlotId,
        reason: RejectionReason,
        /// The claim is released; claim again to retry.
        slot_released: bool,
    },
}

#[derive(Deserialize)]
pub struct ClockChange {
    #[serde(default)]
    pub advance_ms: Option<i64>,
    #[serde(default)]
    pub set: Option<Timestamp>,
}

// ---------------------------------------------------------------------------
// router

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(|| async { Json(json!({ "ok": true })) }))
        .route("/characters", post(create_character).get(list_characters))
        .route(
            "/characters/{id}",
            get(get_character).patch(update_character).delete(delete_character),
        )
        .route("/teams", post(create_team).get(list_teams))
        .route("/teams/{id}", get(get_team).patch(update_team).delete(delete_team))
        .route("/documents", post(create_document).get(list_documents))
        .route("/documents/{id}", get(get_document).patch(edit_document))
        .route("/documents/{id}/threads", post(create_thread))
        .route("/documents/{id}/tasks", post(create_task))
        .route("/threads/{id}/replies", post(append_reply))
        .route("/tasks", get(list_tasks))
        .route("/tasks/{id}", get(task_status))
        .route("/tasks/{id}/latency", get(task_latency))
        .route("/tasks/{id}/cancel", post(cancel_task))
        .route("/tasks/{id}/ideas", get(task_ideas))
        .route("/work/claim", post(claim))
        .route("/work/{slot}/read-bottom", post(read_bottom))
        .route("/work/{slot}/submit", post(submit))
        .route("/admin/clock", get(get_clock).post(move_clock))
        .with_state(state)
}

fn not_found(kind: &str, id: u64) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", format!("{kind} {id} not found"))
}

// ---- characters ----

async fn create_character(
    _: Writer,
    State(s): State<AppState>,
    Json(req): Json<NewCharacter>,
) -> ApiResult<impl IntoResponse> {
    let c = s.mutate(|e| e.create_character(&req.name, &req.description, req.image_ref.clone()))?;
    Ok((StatusCode::CREATED, Json(c)))
}

async fn list_characters(_: Writer, State(s): State<AppState>) -> impl IntoResponse {
    let e = s.engine.read();
    Json(e.workspace().characters().filter(|c| !c.deleted).cloned().collect::<Vec<_>>())
}

async fn get_character(_: Writer, State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<impl IntoResponse> {
    let e = s.engine.read();
    let c = e.workspace().character(CharacterId(id)).ok_or_else(|| not_found("character", id))?;
    Ok(Json(c.clone()))
}

async fn update_character(
    _: Writer,
    State(s): State<AppState>,
    Path(id): Path<u64>,
    Json(patch): Json<CharacterPatch>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.mutate(|e| e.update_character(CharacterId(id), &patch))?))
}

async fn delete_character(_: Writer, State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<StatusCode> {
    s.mutate(|e| e.delete_character(CharacterId(id)))?;
    Ok(StatusCode::NO_CONTENT)
}

// ---- teams ----

async fn create_team(_: Writer, State(s): State<AppState>, Json(req): Json<NewTeam>) -> ApiResult<impl IntoResponse> {
    let t = s.mutate(|e| e.create_team(&req.name, &req.member_ids))?;
    Ok((StatusCode::CREATED, Json(t)))
}

async fn list_teams(_: Writer, State(s): State<AppState>) -> impl IntoResponse {
    let e = s.engine.read();
    Json(e.workspace().list_teams().cloned().collect::<Vec<_>>())
}

async fn get_team(_: Writer, State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<impl IntoResponse> {
    let e = s.engine.read();
    let t = e.workspace().team(TeamId(id)).ok_or_else(|| not_found("team", id))?;
    Ok(Json(t.clone()))
}

async fn update_team(
    _: Writer,
    State(s): State<AppState>,
    Path(id): Path<u64>,
    Json(patch): Json<TeamPatch>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.mutate(|e| e.update_team(TeamId(id), &patch))?))
}

async fn delete_team(_: Writer, State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<StatusCode> {
    s.mutate(|e| e.delete_team(TeamId(id)))?;
    Ok(StatusCode::NO_CONTENT)
}

// ---- documents and threads ----

async fn create_document(
    _: Writer,
    State(s): State<AppState>,
    Json(req): Json<NewDocument>,
) -> ApiResult<impl IntoResponse> {
    let d = s.mutate(|e| e.create_document(&req.title, &req.body))?;
    Ok((StatusCode::CREATED, Json(d)))
}

async fn list_documents(_: Writer, State(s): State<AppState>) -> impl IntoResponse {
    let e = s.engine.read();
    Json(e.workspace().documents().cloned().collect::<Vec<_>>())
}

async fn get_document(_: Writer, State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<impl IntoResponse> {
    let e = s.engine.read();
    let document = e
        .workspace()
        .document(DocumentId(id))
        .ok_or_else(|| not_found("document", id))?
        .clone();
    let threads = e.workspace().threads_on(DocumentId(id)).cloned().collect();
    Ok(Json(DocumentView { document, threads }))
}

async fn edit_document(
    _: Writer,
    State(s): State<AppState>,
    Path(id): Path<u64>,
    Json(edit): Json<Edit>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.mutate(|e| e.edit_document(DocumentId(id), edit))?))
}

async fn create_thread(
    _: Writer,
    State(s): State<AppState>,
    Path(id): Path<u64>,
    Json(req): Json<NewThread>,
) -> ApiResult<impl IntoResponse> {
    let t = s.mutate(|e| e.create_thread(DocumentId(id), req.start, req.end, &req.overview))?;
    Ok((StatusCode::CREATED, Json(t)))
}

async fn append_reply(
    _: Writer,
    State(s): State<AppState>,
    Path(id): Path<u64>,
    Json(req): Json<NewReply>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.mutate(|e| e.append_reply(ThreadId(id), &req.author_label, &req.body))?))
}

// ---- tasks ----

async fn create_task(
    _: Writer,
    State(s): State<AppState>,
    Path(id): Path<u64>,
    Json(req): Json<NewTask>,
) -> ApiResult<impl IntoResponse> {
    let request = TaskRequest {
        document_id: DocumentId(id),
        start: req.start,
        end: req.end,
        team_id: req.team_id,
        note: req.note,
        strategy: req.strategy,
        per_character_quota: req.quota.unwrap_or(s.default_quota),
    };
    let task = s.mutate(|e| e.create_task(&request))?;
    Ok((StatusCode::CREATED, Json(task)))
}

async fn list_tasks(_: Writer, State(s): State<AppState>) -> impl IntoResponse {
    let e = s.engine.read();
    Json(e.orchestrator().tasks().cloned().collect::<Vec<_>>())
}

async fn task_status(_: Writer, State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.engine.read().task_status(TaskId(id))?))
}

async fn task_latency(_: Writer, State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.engine.read().latency_report(TaskId(id))?))
}

async fn cancel_task(_: Writer, State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<impl IntoResponse> {
    s.mutate(|e| e.cancel_task(TaskId(id)))?;
    Ok(Json(s.engine.read().task_status(TaskId(id))?))
}

async fn task_ideas(
    _: Writer,
    State(s): State<AppState>,
    Path(id): Path<u64>,
    Query(q): Query<RankQuery>,
) -> ApiResult<Json<Vec<RankedIdeaView>>> {
    let metric = match q.rank.as_deref().filter(|r| !r.is_empty()) {
        None => None,
        Some(name) => Some(
            name.parse::<Metric>()
                .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "UNKNOWN_METRIC", e.to_string()))?,
        ),
    };
    Ok(Json(s.engine.read().ranked_ideas(TaskId(id), metric)?))
}

// ---- worker side ----

async fn claim(w: Worker, State(s): State<AppState>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.mutate(|e| e.claim(&w.id, w.idempotency_key.as_deref()))?))
}

async fn read_bottom(w: Worker, State(s): State<AppState>, Path(slot): Path<u64>) -> ApiResult<impl IntoResponse> {
    s.mutate(|e| e.attest_read_bottom(SlotId(slot), &w.id, w.idempotency_key.as_deref()))?;
    Ok(Json(json!({ "slot_id": slot, "read_bottom_attested": true })))
}

async fn submit(
    w: Worker,
    State(s): State<AppState>,
    Path(slot): Path<u64>,
    Json(req): Json<SubmitBody>,
) -> ApiResult<Json<SubmitResponse>> {
    let outcome = s.mutate(|e| e.submit_idea(SlotId(slot), &w.id, &req.body, w.idempotency_key.as_deref()))?;
    let e = s.engine.read();
    Ok(Json(match outcome {
        SubmitOutcome::Accepted(sub) => SubmitResponse::Accepted {
            submission_id: sub.id,
            slot_id: sub.slot_id,
            task_id: sub.task_id,
            role_label: sub.role_label,
            reward_cents: e.orchestrator().task(sub.task_id).map_or(0, |t| t.reward_cents),
            submitted_at: sub.submitted_at,
        },
        SubmitOutcome::Rejected { slot_id, reason } => SubmitResponse::Rejected {
            slot_id,
            reason,
            slot_released: true,
        },
    }))
}

// ---- clock ----

async fn get_clock(_: Writer, State(s): State<AppState>) -> impl IntoResponse {
    let now = s.engine.read().now();
    Json(json!({ "now": now, "manual": s.manual_clock.is_some() }))
}

/// Moves a manual clock forward. Holds the engine lock so no request sees
/// time move mid-operation.
async fn move_clock(_: Writer, State(s): State<AppState>, Json(req): Json<ClockChange>) -> ApiResult<impl IntoResponse> {
    let clock = s
        .manual_clock
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "SYSTEM_CLOCK", "the service runs on the system clock"))?;
    let engine = s.engine.write();
    let now = engine.now();
    let target = match (req.set, req.advance_ms) {
        (Some(t), None) => t,
        (None, Some(ms)) => now.plus_millis(ms),
        _ => {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "INVALID",
                "give exactly one of set or advance_ms",
            ))
        }
    };
    if target < now {
        return Err(ApiError::new(StatusCode::CONFLICT, "CLOCK_BACKWARDS", "the clock only moves forward"));
    }
    clock.set(target);
    drop(engine);
    Ok(Json(json!({ "now": target, "manual": true })))
}
