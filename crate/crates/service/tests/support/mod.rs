#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use mindos_core::clock::SystemClock;
use mindos_core::foundation::{ModelRegistry, Script, ScriptedRule};
use mindos_core::net::NetClient;
use mindos_service::app::DEFAULT_MODEL_ID;
use mindos_service::storage::RuntimeOptions;
use mindos_service::Service;
use reqwest::Method;
use serde_json::Value;
use tokio::task::JoinHandle;

pub const FIXTURE: &str = include_str!("../../../core/fixtures/stub_tools.yaml");

/// A service bound to an ephemeral loopback port, offline, scripted model.
pub struct Running {
    pub service: Arc<Service>,
    pub base: String,
    pub net: NetClient,
    task: JoinHandle<()>,
}

impl Drop for Running {
    fn drop(&mut self) {
        self.task.abort();
    }
}

pub fn script(rules: &[(i64, &str, &str)], default: Option<&str>) -> Script {
    Script::new(
        rules.iter().map(|(o, p, c)| ScriptedRule::new(*o, *p, *c)).collect(),
        default.map(str::to_owned),
    )
}

pub async fn start(data_dir: &Path) -> Running {
    let net = NetClient::new(true);
    let models = Arc::new(ModelRegistry::new(net.clone()));
    models
        .register_scripted(DEFAULT_MODEL_ID, true, Script::default())
        .unwrap();
    let options = RuntimeOptions {
        net: net.clone(),
        clock: Arc::new(SystemClock),
        search_url: None,
    };
    let service = Arc::new(Service::open(data_dir.to_path_buf(), models, options).unwrap());
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", 0)).await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let app = mindos_service::http::router(service.clone());
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Running {
        service,
        base,
        net,
        task,
    }
}

impl Running {
    pub fn set_script(&self, script: Script) {
        self.service
            .engine()
            .models()
            .set_script(DEFAULT_MODEL_ID, script)
            .unwrap();
    }

    pub fn calls(&self) -> u64 {
        self.service.engine().models().total_calls()
    }

    pub fn request(&self, method: Method, path: &str) -> reqwest::RequestBuilder {
        self.net.request(method, &format!("{}{path}", self.base)).unwrap()
    }

    /// Sends and returns (status, JSON body or Null).
    pub async fn send(&self, builder: reqwest::RequestBuilder) -> (u16, Value) {
        let response = builder.send().await.unwrap();
        let status = response.status().as_u16();
        let text = response.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    pub async fn post_json(&self, path: &str, body: Value) -> (u16, Value) {
        self.send(self.request(Method::POST, path).json(&body)).await
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        self.send(self.request(Method::GET, path)).await
    }

    pub async fn create_agent(&self, config: Value) -> String {
        let (status, body) = self.post_json("/agents", config).await;
        assert_eq!(status, 201, "{body}");
        body["agent_id"].as_str().unwrap().to_owned()
    }

    pub async fn start_session(&self, agent_id: &str, mode: &str) -> String {
        let (status, body) = self
            .post_json(
                &format!("/agents/{agent_id}/sessions"),
                serde_json::json!({ "mode": mode }),
            )
            .await;
        assert_eq!(status, 201, "{body}");
        body["session_id"].as_str().unwrap().to_owned()
    }

    pub async fn say(&self, session_id: &str, text: &str) -> (u16, Value) {
        self.post_json(
            &format!("/sessions/{session_id}/events"),
            serde_json::json!({"type": "utterance", "text": text}),
        )
        .await
    }

    pub async fn upload(&self, agent_id: &str, store: &str, name: &str, text: &str) -> (u16, Value) {
        let form = reqwest::multipart::Form::new().text("store", store.to_owned()).part(
            "file",
            reqwest::multipart::Part::text(text.to_owned()).file_name(name.to_owned()),
        );
        self.send(
            self.request(Method::POST, &format!("/agents/{agent_id}/knowledge"))
                .multipart(form),
        )
        .await
    }

    pub async fn import_tools(&self, agent_id: &str, document: &str, base_url: &str) -> (u16, Value) {
        self.send(
            self.request(Method::POST, &format!("/agents/{agent_id}/tools:import"))
                .query(&[("base_url", base_url)])
                .body(document.to_owned()),
        )
        .await
    }

    pub async fn export(&self, agent_id: &str) -> Vec<u8> {
        let response = self
            .request(Method::GET, &format!("/agents/{agent_id}/export"))
            .send()
            .await
            .unwrap();
        assert_eq!(response.status(), 200);
        response.bytes().await.unwrap().to_vec()
    }

    /// Reads `n` SSE `data:` payloads from the trace stream.
    pub async fn read_trace(&self, session_id: &str, n: usize) -> Vec<Value> {
        let mut response = self
            .request(Method::GET, &format!("/sessions/{session_id}/trace"))
            .send()
            .await
            .unwrap();
        assert_eq!(response.status(), 200);
        let mut buffer = String::new();
        let mut events = Vec::new();
        while events.len() < n {
            let chunk = tokio::time::timeout(std::time::Duration::from_secs(5), response.chunk())
                .await
                .expect("trace event within 5s")
                .unwrap()
                .expect("stream open");
            buffer.push_str(&String::from_utf8_lossy(&chunk));
            while let Some(end) = buffer.find("\n\n") {
                let block: String = buffer.drain(..end + 2).collect();
                if let Some(data) = block.lines().find_map(|l| l.strip_prefix("data: ")) {
                    events.push(serde_json::from_str(data).unwrap());
                }
            }
        }
        events
    }
}
