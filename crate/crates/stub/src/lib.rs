//! Loopback stub server: the three fixture tool operations plus a completion
//! endpoint, each with an invocation counter.
//!
//! `GET /echo` and `GET /search` echo their query parameters; `POST
//! /summarize` echoes its JSON body. `fail=true` on any tool route answers
//! 500. `POST /complete` answers `{"text": ...}` after an optional number of
//! injected failures.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::Mutex;
use serde_json::{json, Map, Value};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

#[derive(Debug, Default)]
struct StubState {
    counts: Mutex<BTreeMap<String, u64>>,
    completion: Mutex<String>,
    failures_left: Mutex<u32>,
}

impl StubState {
    fn hit(&self, route: &str) {
        *self.counts.lock().entry(route.to_owned()).or_default() += 1;
    }
}

/// A running stub server. Dropping it aborts the server task.
#[derive(Debug)]
pub struct StubServer {
    addr: SocketAddr,
    state: Arc<StubState>,
    task: JoinHandle<()>,
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

impl StubServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests seen on a route such as `"/echo"`, failures included.
    pub fn count(&self, route: &str) -> u64 {
        self.state.counts.lock().get(route).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.state.counts.lock().values().sum()
    }

    pub fn set_completion(&self, text: impl Into<String>) {
        *self.state.completion.lock() = text.into();
    }

    /// The next `n` completion requests answer 503.
    pub fn fail_next_completions(&self, n: u32) {
        *self.state.failures_left.lock() = n;
    }
}

fn failing(value: Option<&Value>) -> bool {
    match value {
        Some(Value::Bool(b)) => *b,
        Some(Value::String(s)) => s == "true",
        _ => false,
    }
}

fn query_object(params: HashMap<String, String>) -> Map<String, Value> {
    params.into_iter().map(|(k, v)| (k, Value::String(v))).collect()
}

fn upstream_failure() -> Response {
    (
        StatusCode::INTERNAL_SERVER_ERROR,
        Json(json!({"error": "injected failure"})),
    )
        .into_response()
}

async fn echo(State(state): State<Arc<StubState>>, Query(params): Query<HashMap<String, String>>) -> Response {
    state.hit("/echo");
    let body = query_object(params);
    if failing(body.get("fail")) {
        return upstream_failure();
    }
    Json(Value::Object(body)).into_response()
}

async fn search(State(state): State<Arc<StubState>>, Query(params): Query<HashMap<String, String>>) -> Response {
    state.hit("/search");
    let mut body = query_object(params);
    if failing(body.get("fail")) {
        return upstream_failure();
    }
    let q = body.get("q").and_then(Value::as_str).unwrap_or_default().to_owned();
    body.insert("results".into(), Value::String(format!("results for {q}")));
    Json(Value::Object(body)).into_response()
}

async fn summarize(State(state): State<Arc<StubState>>, Json(body): Json<Value>) -> Response {
    state.hit("/summarize");
    let Value::Object(mut body) = body else {
        return (StatusCode::BAD_REQUEST, "expected a JSON object").into_response();
    };
    if failing(body.get("fail")) {
        return upstream_failure();
    }
    let text = body.get("text").and_then(Value::as_str).unwrap_or_default();
    let max_words = body.get("max_words").and_then(Value::as_u64).unwrap_or(8) as usize;
    let summary = text.split_whitespace().take(max_words).collect::<Vec<_>>().join(" ");
    body.insert("summary".into(), Value::String(summary));
    Json(Value::Object(body)).into_response()
}

async fn complete(State(state): State<Arc<StubState>>, Json(_body): Json<Value>) -> Response {
    state.hit("/complete");
    {
        let mut left = state.failures_left.lock();
        if *left > 0 {
            *left -= 1;
            return (StatusCode::SERVICE_UNAVAILABLE, "unavailable").into_response();
        }
    }
    let text = state.completion.lock().clone();
    Json(json!({ "text": text })).into_response()
}

fn router(state: Arc<StubState>) -> Router {
    Router::new()
        .route("/echo", get(echo))
        .route("/search", get(search))
        .route("/summarize", post(summarize))
        .route("/complete", post(complete))
        .with_state(state)
}

/// Binds an ephemeral loopback port and serves until dropped.
pub async fn spawn() -> std::io::Result<StubServer> {
    let listener = TcpListener::bind(("127.0.0.1", 0)).await?;
    let addr = listener.local_addr()?;
    let state = Arc::new(StubState::default());
    let app = router(state.clone());
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Ok(StubServer { addr, state, task })
}
