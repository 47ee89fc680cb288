mod common;

use std::collections::BTreeMap;

use mindos_core::kernel::{AgentConfig, ChainStep, StoreKind};
use mindos_core::lui::InputEvent;
use mindos_core::memory::LongTermMemory;
use mindos_core::net::NetClient;
use mindos_core::orchestrator::SessionMode;
use mindos_core::tools::openapi::{import_openapi, import_openapi_with, ImportOptions};
use mindos_core::tools::{register_tool, ToolError, ToolRegistry, ToolStatus};
use serde_json::{json, Value};

const FIXTURE: &str = include_str!("../fixtures/stub_tools.yaml");

fn args(value: Value) -> BTreeMap<String, Value> {
    serde_json::from_value(value).unwrap()
}

async fn registry_for(stub: &mindos_stub::StubServer) -> ToolRegistry {
    let registry = ToolRegistry::new(NetClient::new(true), common::clock());
    let options = ImportOptions {
        base_url: Some(stub.base_url()),
    };
    for spec in import_openapi_with(FIXTURE, &options).unwrap() {
        registry.register(spec).unwrap();
    }
    registry
}

#[tokio::test]
async fn fixture_operations_echo_parameters() {
    let stub = mindos_stub::spawn().await.unwrap();
    let registry = registry_for(&stub).await;
    assert_eq!(import_openapi(FIXTURE).unwrap().len(), 3);

    let echo = registry.invoke("echo", &args(json!({"q": "hello"}))).await.unwrap();
    assert_eq!(echo.status, ToolStatus::Ok);
    assert_eq!(echo.fields["q"], "hello");

    let search = registry.invoke("search", &args(json!({"q": "rust"}))).await.unwrap();
    assert_eq!(search.fields["q"], "rust");
    assert_eq!(search.fields["results"], "results for rust");

    let summary = registry
        .invoke("summarize", &args(json!({"text": "a b c d", "max_words": 2})))
        .await
        .unwrap();
    assert_eq!(summary.fields["text"], "a b c d");
    assert_eq!(summary.fields["summary"], "a b");

    assert_eq!(
        (stub.count("/echo"), stub.count("/search"), stub.count("/summarize")),
        (1, 1, 1)
    );
}

#[tokio::test]
async fn validation_precedes_dispatch() {
    let stub = mindos_stub::spawn().await.unwrap();
    let registry = registry_for(&stub).await;
    assert!(matches!(
        registry.invoke("echo", &args(json!({}))).await,
        Err(ToolError::MissingRequiredParam { .. })
    ));
    assert!(matches!(
        registry
            .invoke("summarize", &args(json!({"text": "x", "max_words": "many"})))
            .await,
        Err(ToolError::TypeMismatch { .. })
    ));
    assert_eq!(stub.total(), 0);
    assert_eq!(registry.total_invocations(), 0);
}

#[tokio::test]
async fn upstream_failure_is_reported() {
    let stub = mindos_stub::spawn().await.unwrap();
    let registry = registry_for(&stub).await;
    match registry.invoke("echo", &args(json!({"q": "x", "fail": true}))).await {
        Err(ToolError::UpstreamError { status, .. }) => assert_eq!(status, 500),
        other => panic!("expected upstream error, got {other:?}"),
    }
}

#[tokio::test]
async fn chain_aborts_at_failing_step() {
    let stub = mindos_stub::spawn().await.unwrap();
    let registry = registry_for(&stub).await;
    let plan: Vec<ChainStep> = serde_json::from_value(json!([
        {"tool": "search", "args": {"q": "rust"}, "bind": "s"},
        {"tool": "echo", "args": {"q": "${s.results}", "fail": true}, "bind": "e"},
        {"tool": "summarize", "args": {"text": "${e.q}"}}
    ]))
    .unwrap();
    let outcome = registry.run_chain(&plan).await.unwrap();
    assert_eq!(outcome.failed_at, Some(1));
    assert_eq!(outcome.completed.len(), 2);
    assert_eq!(stub.count("/search") + stub.count("/echo"), 2);
    assert_eq!(stub.count("/summarize"), 0);
}

#[tokio::test]
async fn chain_binds_outputs_forward() {
    let stub = mindos_stub::spawn().await.unwrap();
    let registry = registry_for(&stub).await;
    let plan: Vec<ChainStep> = serde_json::from_value(json!([
        {"tool": "search", "args": {"q": "rust"}, "bind": "s"},
        {"tool": "summarize", "args": {"text": "${s.results}", "max_words": 2}}
    ]))
    .unwrap();
    let outcome = registry.run_chain(&plan).await.unwrap();
    assert_eq!(outcome.failed_at, None);
    assert_eq!(outcome.completed[1].1.fields["summary"], "results for");
}

#[tokio::test]
async fn import_registers_into_tools_store() {
    let stub = mindos_stub::spawn().await.unwrap();
    let registry = ToolRegistry::new(NetClient::new(true), common::clock());
    let memory = LongTermMemory::default();
    let options = ImportOptions {
        base_url: Some(stub.base_url()),
    };
    for spec in import_openapi_with(FIXTURE, &options).unwrap() {
        register_tool(&registry, &memory, spec).unwrap();
    }
    assert_eq!(memory.chunk_count(StoreKind::Tools), 3);
    let hit = &memory.search(StoreKind::Tools, "summary of a text", 1)[0];
    assert!(hit.chunk_id.starts_with("tools/summarize"));
}

#[tokio::test]
async fn session_invokes_imported_tool() {
    let stub = mindos_stub::spawn().await.unwrap();
    let (engine, agent) = common::engine(
        AgentConfig::new("tooling"),
        common::script(
            &[(0, "invoke_tool echo", r#"{"action":"respond","text":"done"}"#)],
            Some(r#"{"action":"invoke_tool","tool":"echo","args":{"q":"ping"}}"#),
        ),
    );
    let options = ImportOptions {
        base_url: Some(stub.base_url()),
    };
    let ids = agent
        .import_tools(import_openapi_with(FIXTURE, &options).unwrap())
        .unwrap();
    assert_eq!(ids, ["echo", "search", "summarize"]);
    assert_eq!(agent.config().tool_ids, ids);

    let sid = engine.start_session("a1", SessionMode::GoalDirected).unwrap();
    engine
        .submit_event(&sid, &InputEvent::utterance("ping it"))
        .await
        .unwrap();
    assert_eq!(stub.count("/echo"), 1);
    let trace = engine.trace(&sid).unwrap().snapshot();
    assert_eq!(trace[0].effects[0], r#"invoke_tool echo {"q":"ping"} -> ok q=ping"#);
}
