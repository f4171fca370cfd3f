//! HTTP/JSON boundary for interactive labelling sessions.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/sessions` | [`CreateSessionRequest`] -> 201 [`SessionHandle`] |
//! | GET | `/sessions/{id}/work` | [`WorkResponse`] |
//! | POST | `/sessions/{id}/labels` | [`SubmitRequest`] -> [`SubmitResponse`] |
//! | GET | `/sessions/{id}/status` | [`StatusResponse`] |
//! | GET | `/sessions/{id}/report` | [`ReportResponse`] |
//! | GET | `/sessions/{id}/frames/{frame_id}/spectrogram` | PGM image |
//!
//! Errors are `{code, message}` with 404 (unknown session, dataset or
//! frame), 409 (call not valid in the current state) or 422 (malformed or
//! stale submission). A state transition is checkpointed to disk before the
//! response acknowledging it is sent.

pub mod api;
mod error;
mod store;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};

pub use api::*;
pub use error::ApiError;
pub use store::{App, ServiceConfig, DATASET_EXTENSION};

type Shared = State<Arc<App>>;

/// Session work is CPU-bound (feature scaling, retraining), so it runs on
/// the blocking pool.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(v)| v)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e.body_text()))
}

async fn create_session(
    State(app): Shared,
    body: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionHandle>), ApiError> {
    let req = json_body(body)?;
    let handle = blocking(move || app.create(req)).await?;
    Ok((StatusCode::CREATED, Json(handle)))
}

async fn get_work(State(app): Shared, Path(id): Path<String>) -> Result<Json<WorkResponse>, ApiError> {
    blocking(move || app.work(&id)).await.map(Json)
}

async fn submit_labels(
    State(app): Shared,
    Path(id): Path<String>,
    body: Result<Json<SubmitRequest>, JsonRejection>,
) -> Result<Json<SubmitResponse>, ApiError> {
    let req = json_body(body)?;
    blocking(move || app.submit(&id, &req.labels)).await.map(Json)
}

async fn get_status(State(app): Shared, Path(id): Path<String>) -> Result<Json<StatusResponse>, ApiError> {
    blocking(move || app.status(&id)).await.map(Json)
}

async fn get_report(State(app): Shared, Path(id): Path<String>) -> Result<Json<ReportResponse>, ApiError> {
    blocking(move || app.report(&id)).await.map(Json)
}

async fn get_spectrogram(
    State(app): Shared,
    Path((id, frame_id)): Path<(String, u64)>,
) -> Result<impl IntoResponse, ApiError> {
    let pgm = blocking(move || app.spectrogram(&id, frame_id)).await?;
    Ok(([(header::CONTENT_TYPE, "image/x-portable-graymap")], pgm))
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/work", get(get_work))
        .route("/sessions/{id}/labels", post(submit_labels))
        .route("/sessions/{id}/status", get(get_status))
        .route("/sessions/{id}/report", get(get_report))
        .route("/sessions/{id}/frames/{frame_id}/spectrogram", get(get_spectrogram))
        .fallback(fallback)
        .with_state(app)
}

/// Serve until ctrl-c. Sessions checkpointed in the checkpoint directory
/// are resumed at startup.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let app = tokio::task::spawn_blocking(move || App::open(config))
        .await
        .map_err(std::io::Error::other)?
        .map_err(|e| std::io::Error::other(e.message))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(app)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
