//! REST routes and the server-sent trace stream.

use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use mindos_core::kernel::{AgentConfig, StoreKind, Trigger};
use mindos_core::lui::InputEvent;
use mindos_core::orchestrator::{Feedback, SessionError, SessionMode};
use serde::Deserialize;
use serde_json::json;

use crate::app::{Service, ServiceError};
use crate::storage::StorageError;

pub struct ApiError(ServiceError);

impl<E: Into<ServiceError>> From<E> for ApiError {
    fn from(e: E) -> Self {
        ApiError(e.into())
    }
}

fn status_for(error: &ServiceError) -> StatusCode {
    match error {
        ServiceError::Session(SessionError::UnknownAgent(_) | SessionError::UnknownSession(_))
        | ServiceError::Storage(StorageError::NotFound(_)) => StatusCode::NOT_FOUND,
        ServiceError::Session(SessionError::SessionHalted | SessionError::WrongMode) => StatusCode::CONFLICT,
        ServiceError::Session(SessionError::Provider(_)) => StatusCode::BAD_GATEWAY,
        ServiceError::Session(SessionError::Invalid(_))
        | ServiceError::InvalidConfig(_)
        | ServiceError::BadRequest(_)
        | ServiceError::Bundle(_)
        | ServiceError::Tool(_) => StatusCode::BAD_REQUEST,
        ServiceError::Memory(mindos_core::memory::MemoryError::DuplicateDoc { .. }) => StatusCode::CONFLICT,
        ServiceError::Memory(mindos_core::memory::MemoryError::PolicyDenied(_)) => StatusCode::FORBIDDEN,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_for(&self.0);
        if status.is_server_error() {
            tracing::error!("{}", self.0);
        }
        let body = json!({"error": self.0.code(), "message": self.0.to_string()});
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type AppState = State<Arc<Service>>;

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/agents", post(create_agent).get(list_agents))
        .route("/agents:import", post(import_bundle))
        .route("/agents/{id}", get(get_agent))
        .route("/agents/{id}/export", get(export_bundle))
        .route("/agents/{id}/triggers", put(put_triggers))
        .route("/agents/{id}/tools:import", post(import_tools))
        .route("/agents/{id}/knowledge", post(add_knowledge))
        .route("/agents/{id}/search", get(search))
        .route("/agents/{id}/sessions", post(start_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/events", post(submit_event))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/trace", get(trace))
        .route("/sessions/{id}/outputs", get(outputs))
        .with_state(service)
}

async fn create_agent(State(service): AppState, Json(config): Json<AgentConfig>) -> ApiResult<impl IntoResponse> {
    let agent_id = service.create_agent(config).await?;
    Ok((StatusCode::CREATED, Json(json!({ "agent_id": agent_id }))))
}

async fn list_agents(State(service): AppState) -> Json<Vec<String>> {
    Json(service.agent_ids())
}

async fn get_agent(State(service): AppState, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(service.agent_view(&id)?))
}

async fn export_bundle(State(service): AppState, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let bytes = service.export_bundle(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes))
}

async fn import_bundle(State(service): AppState, body: Bytes) -> ApiResult<impl IntoResponse> {
    let agent_id = service.import_bundle(&body).await?;
    Ok((StatusCode::CREATED, Json(json!({ "agent_id": agent_id }))))
}

async fn put_triggers(
    State(service): AppState,
    Path(id): Path<String>,
    Json(triggers): Json<Vec<Trigger>>,
) -> ApiResult<impl IntoResponse> {
    service.set_triggers(&id, triggers).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Deserialize)]
struct ImportQuery {
    base_url: Option<String>,
}

/// Body is the OpenAPI document itself, YAML or JSON.
async fn import_tools(
    State(service): AppState,
    Path(id): Path<String>,
    Query(query): Query<ImportQuery>,
    body: String,
) -> ApiResult<impl IntoResponse> {
    let tool_ids = service.import_tools(&id, &body, query.base_url).await?;
    Ok((StatusCode::CREATED, Json(json!({ "tool_ids": tool_ids }))))
}

fn parse_store(text: &str) -> Result<StoreKind, ServiceError> {
    text.parse().map_err(ServiceError::BadRequest)
}

/// Multipart fields: `store` (store kind) and `file` (named text file).
async fn add_knowledge(
    State(service): AppState,
    Path(id): Path<String>,
    mut multipart: Multipart,
) -> ApiResult<impl IntoResponse> {
    let mut store = None;
    let mut file = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ServiceError::BadRequest(e.to_string()))?
    {
        match field.name() {
            Some("store") => {
                let text = field
                    .text()
                    .await
                    .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
                store = Some(parse_store(text.trim())?);
            }
            Some("file") => {
                let name = field.file_name().unwrap_or_default().to_owned();
                let bytes = field
                    .bytes()
                    .await
                    .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
                let text = String::from_utf8(bytes.to_vec())
                    .map_err(|_| ServiceError::BadRequest("file is not UTF-8 text".into()))?;
                file = Some((name, text));
            }
            _ => {}
        }
    }
    let store = store.ok_or_else(|| ServiceError::BadRequest("missing 'store' field".into()))?;
    let (doc_id, text) = file.ok_or_else(|| ServiceError::BadRequest("missing 'file' field".into()))?;
    let chunks = service.add_knowledge(&id, store, &doc_id, &text).await?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "doc_id": doc_id, "store": store, "chunks": chunks })),
    ))
}

#[derive(Debug, Deserialize)]
struct SearchQuery {
    store: String,
    q: String,
    k: Option<usize>,
}

async fn search(
    State(service): AppState,
    Path(id): Path<String>,
    Query(query): Query<SearchQuery>,
) -> ApiResult<impl IntoResponse> {
    let store = parse_store(&query.store)?;
    Ok(Json(service.search(&id, store, &query.q, query.k.unwrap_or(4))?))
}

#[derive(Debug, Deserialize)]
struct StartSession {
    mode: SessionMode,
}

async fn start_session(
    State(service): AppState,
    Path(id): Path<String>,
    Json(body): Json<StartSession>,
) -> ApiResult<impl IntoResponse> {
    let session_id = service.start_session(&id, body.mode)?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": session_id }))))
}

async fn get_session(State(service): AppState, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(service.engine().session_info(&id).await?))
}

async fn submit_event(
    State(service): AppState,
    Path(id): Path<String>,
    Json(event): Json<InputEvent>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(service.submit_event(&id, &event).await?))
}

async fn feedback(
    State(service): AppState,
    Path(id): Path<String>,
    Json(feedback): Json<Feedback>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(service.apply_feedback(&id, &feedback).await?))
}

/// One `cycle` event per trace, id = cycle_index; backlog first.
async fn trace(
    State(service): AppState,
    Path(id): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let log = service.engine().trace(&id)?;
    let events = log.stream().map(|cycle| {
        let event = Event::default()
            .event("cycle")
            .id(cycle.cycle_index.to_string())
            .json_data(&cycle)
            .expect("trace serializes");
        Ok(event)
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

async fn outputs(State(service): AppState, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(service.engine().outputs(&id)?))
}

/// Serves until ctrl-c.
pub async fn serve(service: Arc<Service>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
