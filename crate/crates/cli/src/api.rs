//! The HTTP surface over [`Engine`].
//!
//! Every non-2xx response carries an [`ApiError`] body. Engine calls run on
//! the blocking pool; per-conversation exclusion is the engine's job, so a
//! second prompt on a busy conversation comes back as 409 immediately.

use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cmi_core::gateway::{GatewayError, LlmConfig};
use cmi_core::interpreter::InterpreterConfig;
use cmi_core::{Engine, EngineError, PromptOutcome, Stage, StoreError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::mpsc;

use crate::service_config::ServiceConfig;

/// Restrictive policy for untrusted, model-derived SVG.
pub const SVG_CSP: &str = "default-src 'none'; style-src 'unsafe-inline'; img-src data:; sandbox";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub http_status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            http_status: status.as_u16(),
            code: code.to_string(),
            message: message.into(),
            detail: None,
        }
    }

    fn with_detail(mut self, detail: Value) -> Self {
        self.detail = Some(detail);
        self
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

fn store_status(e: &StoreError) -> StatusCode {
    match e {
        StoreError::UnknownConversation(_) | StoreError::NotFound(_) => StatusCode::NOT_FOUND,
        StoreError::AlreadyExists(_) => StatusCode::CONFLICT,
        StoreError::StorageFull(_) => StatusCode::INSUFFICIENT_STORAGE,
        StoreError::DanglingArtifact(_)
        | StoreError::HashMismatch(_)
        | StoreError::UnsupportedVersion(_)
        | StoreError::InvalidArchive(_) => StatusCode::BAD_REQUEST,
        StoreError::Io(_) | StoreError::CorruptLog { .. } => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn gateway_status(e: &GatewayError) -> StatusCode {
    match e {
        GatewayError::ConfigInvalid(_) | GatewayError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
        GatewayError::ContextOverflow(_) => StatusCode::PAYLOAD_TOO_LARGE,
        GatewayError::RateLimited { .. } => StatusCode::TOO_MANY_REQUESTS,
        GatewayError::Network(_) => StatusCode::GATEWAY_TIMEOUT,
        GatewayError::BackendUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        _ => StatusCode::BAD_GATEWAY,
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let message = e.to_string();
        match &e {
            EngineError::ConfigInvalid(c) => ApiError::new(StatusCode::BAD_REQUEST, e.code(), message)
                .with_detail(json!({ "field": c.field, "reason": c.reason })),
            EngineError::InvalidRequest(_) => ApiError::new(StatusCode::BAD_REQUEST, e.code(), message),
            EngineError::PromptTooLarge { estimate, budget } => {
                ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, e.code(), message)
                    .with_detail(json!({ "estimate": estimate, "budget": budget }))
            }
            EngineError::UnknownConversation(_) => ApiError::new(StatusCode::NOT_FOUND, e.code(), message),
            EngineError::Busy(_) => ApiError::new(StatusCode::CONFLICT, e.code(), message),
            EngineError::BackendUnavailable(_) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, e.code(), message),
            EngineError::GenerationFailed(g) => {
                let mut detail = json!({ "gateway_code": g.code() });
                if let GatewayError::RateLimited {
                    retry_after: Some(secs),
                } = g
                {
                    detail["retry_after"] = json!(secs);
                }
                ApiError::new(gateway_status(g), e.code(), message).with_detail(detail)
            }
            EngineError::Store(s) => ApiError::new(store_status(s), s.code(), message),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::new(store_status(&e), e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub config: Arc<ServiceConfig>,
}

#[derive(Debug, Deserialize)]
pub struct CreateRequest {
    pub llm_config: LlmConfig,
    pub interpreter_config: InterpreterConfig,
}

#[derive(Debug, Deserialize)]
pub struct PromptRequest {
    pub text: String,
}

#[derive(Debug, Default, Deserialize)]
pub struct ReconfigureRequest {
    #[serde(default)]
    pub llm_config: Option<LlmConfig>,
    #[serde(default)]
    pub interpreter_config: Option<InterpreterConfig>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/conversations", post(create_conversation).get(list_conversations))
        .route("/api/conversations/{id}", get(get_conversation))
        .route("/api/conversations/{id}/prompts", post(submit_prompt))
        .route("/api/conversations/{id}/config", axum::routing::patch(reconfigure))
        .route("/api/artifacts/{hash}", get(get_artifact))
        .route("/api/renderers", get(renderers))
        .route("/api/backends", get(backends))
        .fallback(|| async { ApiError::not_found("no such route") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(
                StatusCode::METHOD_NOT_ALLOWED,
                "method_not_allowed",
                "method not allowed",
            )
        })
        .with_state(state)
}

/// JSON bodies are parsed by hand so that malformed input gets an
/// [`ApiError`] body like every other failure.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn create_conversation(State(s): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: CreateRequest = parse_body(&body)?;
    let engine = s.engine.clone();
    let conversation =
        blocking(move || Ok(engine.create_conversation(req.llm_config, req.interpreter_config)?)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "conversation": conversation }))).into_response())
}

async fn list_conversations(State(s): State<AppState>) -> ApiResult<Json<Value>> {
    let engine = s.engine.clone();
    let list = blocking(move || Ok(engine.list_conversations()?)).await?;
    Ok(Json(json!({ "conversations": list })))
}

async fn get_conversation(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let engine = s.engine.clone();
    let conversation = blocking(move || Ok(engine.get_conversation(&id)?)).await?;
    Ok(Json(json!({ "conversation": conversation })))
}

async fn reconfigure(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: ReconfigureRequest = parse_body(&body)?;
    let engine = s.engine.clone();
    let conversation = blocking(move || Ok(engine.reconfigure(&id, req.llm_config, req.interpreter_config)?)).await?;
    Ok(Json(json!({ "conversation": conversation })))
}

fn wants_event_stream(headers: &HeaderMap) -> bool {
    headers
        .get_all(header::ACCEPT)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .any(|v| v.contains("text/event-stream"))
}

async fn submit_prompt(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let req: PromptRequest = parse_body(&body)?;
    if wants_event_stream(&headers) {
        return prompt_stream(s.engine.clone(), id, req.text).await;
    }
    let engine = s.engine.clone();
    let outcome = blocking(move || Ok(engine.submit_prompt(&id, &req.text)?)).await?;
    Ok(Json(json!({ "outcome": outcome })).into_response())
}

#[allow(clippy::large_enum_variant)]
enum Progress {
    Stage(Stage),
    Finished(ApiResult<PromptOutcome>),
}

fn progress_event(p: Progress) -> Event {
    let event = match p {
        Progress::Stage(stage) => Event::default()
            .event(stage.as_str())
            .json_data(json!({ "stage": stage })),
        Progress::Finished(Ok(outcome)) => Event::default()
            .event("outcome")
            .json_data(json!({ "outcome": outcome })),
        Progress::Finished(Err(e)) => Event::default().event("error").json_data(&e),
    };
    event.unwrap_or_else(|e| Event::default().event("error").data(e.to_string()))
}

/// Stage markers as server-sent events, then one `outcome` (or `error`)
/// event. Failures before the prompt is accepted (busy, unknown id) are
/// returned as plain error responses instead of a stream.
async fn prompt_stream(engine: Arc<Engine>, id: String, text: String) -> ApiResult<Response> {
    let (tx, mut rx) = mpsc::unbounded_channel();
    tokio::task::spawn_blocking(move || {
        let stages = tx.clone();
        let result = engine.submit_prompt_with_progress(&id, &text, &mut |stage| {
            let _ = stages.send(Progress::Stage(stage));
        });
        let _ = tx.send(Progress::Finished(result.map_err(ApiError::from)));
    });
    let first = match rx.recv().await {
        Some(Progress::Finished(Err(e))) => return Err(e),
        Some(p) => p,
        None => return Err(ApiError::internal("prompt worker exited without a result")),
    };
    let stream = futures::stream::unfold((Some(first), rx), |(pending, mut rx)| async move {
        let next = match pending {
            Some(p) => p,
            None => rx.recv().await?,
        };
        Some((Ok::<_, Infallible>(progress_event(next)), (None, rx)))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()).into_response())
}

/// Media type from the bytes themselves; blobs are stored without format.
pub fn sniff_media_type(bytes: &[u8]) -> &'static str {
    const PNG: &[u8] = b"\x89PNG\r\n\x1a\n";
    if bytes.starts_with(PNG) {
        return "image/png";
    }
    let head = &bytes[..bytes.len().min(512)];
    let head = String::from_utf8_lossy(head);
    let trimmed = head.trim_start_matches('\u{feff}').trim_start();
    if trimmed.starts_with("<svg") || (trimmed.starts_with("<?xml") && head.contains("<svg")) {
        return "image/svg+xml";
    }
    "text/plain; charset=utf-8"
}

async fn get_artifact(State(s): State<AppState>, Path(hash): Path<String>) -> ApiResult<Response> {
    let store = s.engine.store().clone();
    let bytes = blocking(move || Ok(store.get_artifact(&hash)?)).await?;
    let media = sniff_media_type(&bytes);
    let mut response = (StatusCode::OK, bytes).into_response();
    let h = response.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static(media));
    h.insert(header::X_CONTENT_TYPE_OPTIONS, HeaderValue::from_static("nosniff"));
    h.insert(
        header::CACHE_CONTROL,
        HeaderValue::from_static("public, max-age=31536000, immutable"),
    );
    if media == "image/svg+xml" {
        h.insert(header::CONTENT_SECURITY_POLICY, HeaderValue::from_static(SVG_CSP));
    }
    Ok(response)
}

async fn renderers(State(s): State<AppState>) -> ApiResult<Json<Value>> {
    let engine = s.engine.clone();
    let probes = blocking(move || Ok(engine.interpreter().probe_renderers())).await?;
    Ok(Json(json!({ "renderers": probes })))
}

async fn backends(State(s): State<AppState>) -> Json<Value> {
    let list: Vec<_> = s.config.backends.iter().map(|b| b.status()).collect();
    Json(json!({ "backends": list }))
}

/// Serve `router` on `listener` until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, router: Router) -> std::io::Result<()> {
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
