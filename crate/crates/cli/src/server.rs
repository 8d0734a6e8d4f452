//! HTTP and WebSocket front end over the service layer.
//!
//! - `GET /health` returns `{status, model_version}`.
//! - `POST /enroll` takes `{user, png_base64}` and stores a reference.
//! - `POST /verify` takes `{user, png_base64}` and returns `{distance, threshold, accepted}`.
//! - `GET /ws` upgrades to a capture session; one JSON reply per message.

use std::sync::{Arc, RwLock};

use airsig::service::{CaptureConfig, EnrollmentStore, ServiceError, SessionState, Verifier};
use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::{debug, info};

pub struct AppState {
    pub verifier: Verifier,
    pub store: RwLock<EnrollmentStore>,
    pub capture: CaptureConfig,
}

impl AppState {
    pub fn new(verifier: Verifier, store: EnrollmentStore, capture: CaptureConfig) -> Arc<Self> {
        Arc::new(Self { verifier, store: RwLock::new(store), capture })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/enroll", post(enroll))
        .route("/verify", post(verify))
        .route("/ws", get(ws))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn run(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::UnknownUser(_) => StatusCode::NOT_FOUND,
            ServiceError::InvalidImage(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(StatusCode::BAD_REQUEST, e.body_text())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageRequest {
    pub user: String,
    pub png_base64: String,
}

impl ImageRequest {
    fn png(&self) -> Result<Vec<u8>, ApiError> {
        if self.user.is_empty() {
            return Err(ApiError(StatusCode::BAD_REQUEST, "user must not be empty".into()));
        }
        base64::engine::general_purpose::STANDARD
            .decode(&self.png_base64)
            .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("png_base64: {e}")))
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "model_version": state.verifier.model_version() }))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn poisoned<T>(_: T) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, "enrollment store lock poisoned".into())
}

async fn enroll(
    State(state): State<Arc<AppState>>,
    req: Result<Json<ImageRequest>, JsonRejection>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let Json(req) = req?;
    let png = req.png()?;
    let reference = blocking(move || {
        let mut store = state.store.write().map_err(poisoned)?;
        Ok(state.verifier.enroll(&mut store, &req.user, &png)?)
    })
    .await?;
    info!(%reference, "enrolled reference");
    Ok(Json(json!({ "reference": reference })))
}

async fn verify(
    State(state): State<Arc<AppState>>,
    req: Result<Json<ImageRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = req?;
    let png = req.png()?;
    let outcome = blocking(move || {
        let store = state.store.read().map_err(poisoned)?;
        Ok(state.verifier.verify(&store, &req.user, &png)?)
    })
    .await?;
    Ok(Json(outcome).into_response())
}

async fn ws(State(state): State<Arc<AppState>>, upgrade: WebSocketUpgrade) -> Response {
    upgrade.on_upgrade(move |socket| session(socket, state.capture))
}

async fn session(mut socket: WebSocket, capture: CaptureConfig) {
    let id = uuid::Uuid::new_v4().to_string();
    let mut state = match SessionState::new(id.clone(), &capture) {
        Ok(s) => s,
        Err(e) => {
            let _ = socket.send(Message::Text(airsig::service::Outbound::error(e.to_string()).to_json().into())).await;
            return;
        }
    };
    debug!(session = %id, "session opened");
    while let Some(Ok(msg)) = socket.recv().await {
        let reply = match msg {
            Message::Text(text) => state.handle_text(text.as_str()),
            Message::Binary(_) => airsig::service::Outbound::error("binary messages are not supported"),
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => continue,
        };
        if socket.send(Message::Text(reply.to_json().into())).await.is_err() {
            break;
        }
    }
    debug!(session = %id, "session closed");
}
