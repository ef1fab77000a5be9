use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use saf_lab::io::rgb_png_bytes;
use saf_lab::pipeline::{
    read_session, session_overlays, write_session, PipelineConfig, SessionEntry, Workspace,
};
use saf_lab::scene_sim::class_name;
use saf_lab::{Error, Result};
use serde::{Deserialize, Serialize};
use tokio::sync::{watch, Mutex};
use tower_http::services::ServeDir;

/// Schema version carried by every response as `v`.
pub const API_VERSION: u32 = 1;

const FALLBACK_INDEX: &str = include_str!("../static/index.html");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeView {
    pub cluster_id: usize,
    pub frame_png_base64: String,
    pub label: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub v: u32,
    pub prototypes: Vec<PrototypeView>,
    pub classes: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusView {
    pub v: u32,
    pub labelled: usize,
    pub total: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub cluster_id: usize,
    pub label: usize,
}

/// One labelling session bound to its session file. Label updates are
/// serialized by a lock held across the file write.
pub struct LabelSession {
    path: PathBuf,
    classes: Vec<String>,
    overlays: Vec<String>,
    entries: Mutex<Vec<SessionEntry>>,
    complete: watch::Sender<bool>,
}

impl LabelSession {
    /// `overlays[i]` is the PNG shown for `entries[i]`.
    pub fn new(
        path: PathBuf,
        entries: Vec<SessionEntry>,
        overlays: Vec<Vec<u8>>,
        classes: Vec<String>,
    ) -> Result<Self> {
        if overlays.len() != entries.len() {
            return Err(Error::config("one overlay per session entry expected"));
        }
        if let Some(e) = entries
            .iter()
            .find(|e| e.label.is_some_and(|l| l >= classes.len()))
        {
            return Err(Error::format(
                &path,
                format!("cluster {} holds an unknown label", e.cluster_id),
            ));
        }
        let b64 = base64::engine::general_purpose::STANDARD;
        let complete = entries.iter().all(|e| e.label.is_some());
        Ok(Self {
            path,
            classes,
            overlays: overlays.iter().map(|p| b64.encode(p)).collect(),
            entries: Mutex::new(entries),
            complete: watch::channel(complete).0,
        })
    }

    /// Session of a run directory, with overlays rendered from its frames.
    pub fn open(cfg: &PipelineConfig, ws: &Workspace) -> Result<Self> {
        let entries = read_session(&ws.session())?;
        let overlays = session_overlays(cfg, ws, &entries)?
            .iter()
            .map(rgb_png_bytes)
            .collect::<Result<Vec<_>>>()?;
        let classes = (0..cfg.sim.n_classes).map(class_name).collect();
        Self::new(ws.session(), entries, overlays, classes)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub async fn view(&self) -> SessionView {
        let entries = self.entries.lock().await;
        SessionView {
            v: API_VERSION,
            prototypes: entries
                .iter()
                .zip(&self.overlays)
                .map(|(e, png)| PrototypeView {
                    cluster_id: e.cluster_id,
                    frame_png_base64: png.clone(),
                    label: e.label,
                })
                .collect(),
            classes: self.classes.clone(),
        }
    }

    pub async fn status(&self) -> StatusView {
        let entries = self.entries.lock().await;
        StatusView {
            v: API_VERSION,
            labelled: entries.iter().filter(|e| e.label.is_some()).count(),
            total: entries.len(),
        }
    }

    /// Records a label and persists the session file.
    pub async fn set_label(&self, req: LabelRequest) -> std::result::Result<StatusView, ApiError> {
        if req.label >= self.classes.len() {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!(
                    "label {} outside the {} classes",
                    req.label,
                    self.classes.len()
                ),
            ));
        }
        let mut entries = self.entries.lock().await;
        let Some(i) = entries.iter().position(|e| e.cluster_id == req.cluster_id) else {
            return Err(ApiError::new(
                StatusCode::NOT_FOUND,
                format!("unknown cluster {}", req.cluster_id),
            ));
        };
        let previous = entries[i].label;
        entries[i].label = Some(req.label);
        if let Err(e) = write_session(&self.path, &entries) {
            entries[i].label = previous;
            return Err(ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                e.to_string(),
            ));
        }
        let labelled = entries.iter().filter(|e| e.label.is_some()).count();
        if labelled == entries.len() {
            self.complete.send_replace(true);
        }
        Ok(StatusView {
            v: API_VERSION,
            labelled,
            total: entries.len(),
        })
    }

    /// Resolves once every prototype has been labelled through a POST.
    pub async fn wait_complete(&self) {
        let mut rx = self.complete.subscribe();
        rx.mark_unchanged();
        let _ = rx.wait_for(|&done| done).await;
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "v": API_VERSION, "error": self.message });
        (self.status, Json(body)).into_response()
    }
}

async fn get_session(State(s): State<Arc<LabelSession>>) -> Json<SessionView> {
    Json(s.view().await)
}

async fn get_status(State(s): State<Arc<LabelSession>>) -> Json<StatusView> {
    Json(s.status().await)
}

async fn post_label(
    State(s): State<Arc<LabelSession>>,
    body: std::result::Result<Json<LabelRequest>, JsonRejection>,
) -> std::result::Result<Json<StatusView>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::new(e.status(), e.body_text()))?;
    s.set_label(req).await.map(Json)
}

/// API routes plus static assets at `/` (the given directory, else a
/// built-in page).
pub fn router(session: Arc<LabelSession>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/session", get(get_session))
        .route("/api/session/labels", post(post_label))
        .route("/api/session/status", get(get_status))
        .with_state(session);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(FALLBACK_INDEX) })),
    }
}

/// Serves until every prototype is labelled or the process is interrupted.
pub async fn serve(
    session: Arc<LabelSession>,
    addr: SocketAddr,
    static_dir: Option<&Path>,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("labelling session on http://{}", listener.local_addr()?);
    let done = session.clone();
    axum::serve(listener, router(session, static_dir))
        .with_graceful_shutdown(async move {
            tokio::select! {
                _ = done.wait_complete() => log::info!("all prototypes labelled"),
                _ = tokio::signal::ctrl_c() => log::info!("interrupted"),
            }
        })
        .await
}
