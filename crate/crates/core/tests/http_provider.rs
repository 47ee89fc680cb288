use std::sync::Arc;
use std::time::Duration;

use mindos_core::foundation::{CompletionProvider, HttpProvider, ModelDescriptor, ModelRegistry, ProviderError};
use mindos_core::kernel::Directive;
use mindos_core::net::NetClient;
use mindos_core::thought_stream::step;
use mindos_core::working_memory::Thought;

fn provider(stub: &mindos_stub::StubServer) -> HttpProvider {
    HttpProvider::new(format!("{}/complete", stub.base_url()), NetClient::new(true))
        .with_backoff_base(Duration::from_millis(1))
}

#[tokio::test]
async fn retries_then_succeeds() {
    let stub = mindos_stub::spawn().await.unwrap();
    stub.set_completion("hello");
    stub.fail_next_completions(2);
    assert_eq!(provider(&stub).complete("p").await.unwrap(), "hello");
    assert_eq!(stub.count("/complete"), 3);
}

#[tokio::test]
async fn exhausted_retries_are_unreachable() {
    let stub = mindos_stub::spawn().await.unwrap();
    stub.fail_next_completions(10);
    assert!(matches!(
        provider(&stub).complete("p").await,
        Err(ProviderError::ProviderUnreachable(_))
    ));
    assert_eq!(stub.count("/complete"), 3);
}

#[tokio::test]
async fn http_model_drives_a_step() {
    let stub = mindos_stub::spawn().await.unwrap();
    stub.set_completion(r#"{"action":"respond","text":"from http"}"#);
    let models = ModelRegistry::new(NetClient::new(true));
    let descriptor = ModelDescriptor::http("remote", format!("{}/complete", stub.base_url()), true);
    models.register_provider(descriptor, Arc::new(provider(&stub))).unwrap();
    let thought = Thought {
        instructions: "Assist the user.".into(),
        dialog_context: None,
        perception: Some("hi".into()),
        user_profile: None,
        agent_profile: None,
        related_memory: None,
        history: None,
        date: chrono::Utc::now(),
    };
    let outcome = step(&models, &thought, mindos_core::foundation::TaskKind::Decide)
        .await
        .unwrap();
    assert_eq!(outcome.directive, Directive::respond("from http"));
    assert_eq!(models.call_count("remote"), 1);
}

#[tokio::test]
async fn offline_client_refuses_remote_hosts() {
    let before = mindos_core::net::stats();
    let provider = HttpProvider::new("http://203.0.113.7/complete", NetClient::new(true))
        .with_backoff_base(Duration::from_millis(1));
    assert!(matches!(
        provider.complete("p").await,
        Err(ProviderError::ProviderUnreachable(_))
    ));
    let after = mindos_core::net::stats();
    assert_eq!(after.outbound_connects, before.outbound_connects);
    assert!(after.outbound_attempts > before.outbound_attempts);
    assert!(after.blocked > before.blocked);
}
