//! HTTP front end for the adjudication book.
//!
//! ```text
//! GET  /tasks/next?expert=ID   -> {"task": ReviewTask | null}
//! POST /votes                  {expert, pair_a, pair_b, verdict} -> VoteAck
//! GET  /progress               -> Progress
//! ```
//!
//! Errors come back as `{"error": kind, "message": text}`.

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use signmix_core::review::{Progress, ReviewBook, ReviewTask, VoteAck};
use signmix_core::{Error, GlossId};

pub type SharedBook = Arc<RwLock<ReviewBook>>;

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    pub expert: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NextTask {
    pub task: Option<ReviewTask>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteRequest {
    pub expert: String,
    pub pair_a: GlossId,
    pub pair_b: GlossId,
    pub verdict: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

pub struct ApiError(Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self.0 {
            Error::UnknownExpert(_) => (StatusCode::FORBIDDEN, "unknown_expert"),
            Error::UnknownTask(..) => (StatusCode::NOT_FOUND, "unknown_task"),
            Error::DuplicateVote { .. } => (StatusCode::CONFLICT, "duplicate_vote"),
            Error::TaskClosed(..) => (StatusCode::CONFLICT, "task_closed"),
            Error::InvalidArgument(_) => (StatusCode::BAD_REQUEST, "invalid_argument"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let body = ErrorBody {
            error: kind.into(),
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

fn poisoned() -> ApiError {
    ApiError(Error::Integrity("review book lock poisoned".into()))
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

async fn next_task(
    State(book): State<SharedBook>,
    Query(q): Query<NextQuery>,
) -> Result<Json<NextTask>, ApiError> {
    let book = book.read().map_err(|_| poisoned())?;
    let task = book.next_task(&q.expert).map_err(ApiError)?;
    Ok(Json(NextTask { task }))
}

async fn submit_vote(
    State(book): State<SharedBook>,
    Json(req): Json<VoteRequest>,
) -> Result<Json<VoteAck>, ApiError> {
    let mut book = book.write().map_err(|_| poisoned())?;
    let ack = book
        .submit_vote(&req.expert, req.pair_a, req.pair_b, req.verdict, now_ms())
        .map_err(ApiError)?;
    Ok(Json(ack))
}

async fn progress(State(book): State<SharedBook>) -> Result<Json<Progress>, ApiError> {
    let book = book.read().map_err(|_| poisoned())?;
    Ok(Json(book.progress()))
}

pub fn router(book: SharedBook) -> Router {
    Router::new()
        .route("/tasks/next", get(next_task))
        .route("/votes", post(submit_vote))
        .route("/progress", get(progress))
        .with_state(book)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, book: ReviewBook) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(Arc::new(RwLock::new(book)))).await
}
