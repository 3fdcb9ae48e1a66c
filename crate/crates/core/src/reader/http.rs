//! JSON-over-HTTP interface of the reader study.
//!
//! | method | path                          | notes                              |
//! |--------|-------------------------------|------------------------------------|
//! | GET    | `/api/cases/next?reader&mode` | 204 when the reader is done        |
//! | POST   | `/api/cases/{id}/responses`   | 201, 409 on a repeat               |
//! | GET    | `/api/cases/{id}/image`       | PNG                                |
//! | GET    | `/api/cases/{id}/overlay`     | PNG, 404 if the case has none      |
//! | GET    | `/api/summary`                | admin token                        |
//! | POST   | `/api/readers`                | admin token, `{"reader_id": ...}`  |
//!
//! The admin token is sent as `Authorization: Bearer <token>`.

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::corpus::AnomalyLabel;
use crate::error::{Error, Result};

use super::{ReaderResponse, ReaderStudy, ReadingMode};

type Shared = Arc<ReaderStudy>;

struct ApiError(StatusCode, String);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Conflict(_) => StatusCode::CONFLICT,
            Error::Validation(_) | Error::Label(_) | Error::Parse(_) | Error::Json(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn unprocessable(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::UNPROCESSABLE_ENTITY, msg.into())
}

async fn next_case(State(study): State<Shared>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Response> {
    let reader = q
        .get("reader")
        .ok_or_else(|| unprocessable("missing query parameter `reader`"))?;
    let mode: ReadingMode = q
        .get("mode")
        .map(|m| m.parse())
        .transpose()?
        .unwrap_or(ReadingMode::Blind);
    Ok(match study.next_case(reader, mode)? {
        Some(view) => Json(view).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

/// Request body; `case_id` may be omitted since it is in the path.
#[derive(Deserialize)]
struct Submission {
    reader_id: String,
    #[serde(default)]
    case_id: Option<String>,
    chosen_label: String,
    mode: String,
    elapsed_ms: i64,
}

async fn submit(State(study): State<Shared>, UrlPath(case_id): UrlPath<String>, body: Bytes) -> ApiResult<Response> {
    study.case(&case_id)?;
    let s: Submission = serde_json::from_slice(&body).map_err(|e| unprocessable(format!("malformed response: {e}")))?;
    if s.case_id.as_deref().is_some_and(|c| c != case_id) {
        return Err(unprocessable(format!(
            "body case_id does not match path case {case_id}"
        )));
    }
    let chosen_label: AnomalyLabel = s.chosen_label.parse()?;
    let mode: ReadingMode = s.mode.parse()?;
    let elapsed_ms = u64::try_from(s.elapsed_ms).map_err(|_| unprocessable("elapsed_ms must be non-negative"))?;
    let response = ReaderResponse {
        reader_id: s.reader_id,
        case_id,
        chosen_label,
        mode,
        elapsed_ms,
        submitted_at: chrono::Utc::now(),
    };
    study.submit(response.clone())?;
    Ok((StatusCode::CREATED, Json(response)).into_response())
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn admin(study: &ReaderStudy, headers: &HeaderMap) -> ApiResult<()> {
    study.check_admin(bearer(headers)).map_err(|e| match e {
        Error::Config(m) => ApiError(StatusCode::FORBIDDEN, m),
        other => ApiError(StatusCode::UNAUTHORIZED, other.to_string()),
    })
}

async fn summary(State(study): State<Shared>, headers: HeaderMap) -> ApiResult<Response> {
    admin(&study, &headers)?;
    Ok(Json(study.summary()?).into_response())
}

#[derive(Deserialize)]
struct NewReader {
    reader_id: String,
}

async fn register(State(study): State<Shared>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    admin(&study, &headers)?;
    let r: NewReader = serde_json::from_slice(&body).map_err(|e| unprocessable(format!("malformed reader: {e}")))?;
    let created = study.register_reader(&r.reader_id)?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(json!({ "reader_id": r.reader_id }))).into_response())
}

fn png(path: std::path::PathBuf) -> ApiResult<Response> {
    let bytes = std::fs::read(&path).map_err(|e| ApiError::from(Error::io(&path, e)))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn image(State(study): State<Shared>, UrlPath(case_id): UrlPath<String>) -> ApiResult<Response> {
    png(study.image_path(&case_id)?)
}

async fn overlay(State(study): State<Shared>, UrlPath(case_id): UrlPath<String>) -> ApiResult<Response> {
    png(study.overlay_path(&case_id)?)
}

pub fn router(study: Arc<ReaderStudy>) -> Router {
    Router::new()
        .route("/api/cases/next", get(next_case))
        .route("/api/cases/{id}/responses", post(submit))
        .route("/api/cases/{id}/image", get(image))
        .route("/api/cases/{id}/overlay", get(overlay))
        .route("/api/summary", get(summary))
        .route("/api/readers", post(register))
        .with_state(study)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    study: Arc<ReaderStudy>,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<()> {
    axum::serve(listener, router(study))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| Error::External(format!("http server: {e}")))
}

/// A server running on its own thread; stops when dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) -> Result<()> {
        self.stop_and_join()
    }

    fn stop_and_join(&mut self) -> Result<()> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| Error::External("server thread panicked".into()))?,
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop_and_join();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves on a background
/// thread.
pub fn spawn_server(study: Arc<ReaderStudy>, addr: SocketAddr) -> Result<ServerHandle> {
    let listener = std::net::TcpListener::bind(addr).map_err(|e| Error::External(format!("bind {addr}: {e}")))?;
    let addr = listener.local_addr().map_err(|e| Error::External(e.to_string()))?;
    listener
        .set_nonblocking(true)
        .map_err(|e| Error::External(e.to_string()))?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || -> Result<()> {
        let rt = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .map_err(|e| Error::External(format!("runtime: {e}")))?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).map_err(|e| Error::External(e.to_string()))?;
            serve(study, listener, async move {
                let _ = rx.await;
            })
            .await
        })
    });
    Ok(ServerHandle {
        addr,
        stop: Some(tx),
        thread: Some(thread),
    })
}
