#![allow(dead_code)]

use std::sync::Arc;

use chrono::{TimeZone, Utc};
use mindos_core::clock::{Clock, ManualClock};
use mindos_core::foundation::{ModelRegistry, Script, ScriptedRule};
use mindos_core::kernel::AgentConfig;
use mindos_core::memory::LongTermMemory;
use mindos_core::net::NetClient;
use mindos_core::orchestrator::{AgentRuntime, Engine, WorkflowStore};
use mindos_core::tools::ToolRegistry;

pub const MODEL: &str = "scripted";

pub fn clock() -> Arc<dyn Clock> {
    Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 5, 1, 9, 30, 0).unwrap()))
}

pub fn script(rules: &[(i64, &str, &str)], default: Option<&str>) -> Script {
    Script::new(
        rules
            .iter()
            .map(|(order, pattern, completion)| ScriptedRule::new(*order, *pattern, *completion))
            .collect(),
        default.map(str::to_owned),
    )
}

pub fn runtime(config: AgentConfig, net: NetClient, clock: Arc<dyn Clock>) -> Arc<AgentRuntime> {
    let memory = LongTermMemory::in_memory(config.memory_policy);
    let tools = ToolRegistry::new(net, clock);
    Arc::new(AgentRuntime::new(config, tools, memory, WorkflowStore::default()))
}

/// An offline engine with one scripted model and one agent `a1`.
pub fn engine(config: AgentConfig, script: Script) -> (Engine, Arc<AgentRuntime>) {
    let net = NetClient::new(true);
    let clock = clock();
    let models = Arc::new(ModelRegistry::new(net.clone()));
    models.register_scripted(MODEL, true, script).unwrap();
    let mut config = config;
    config.agent_id = "a1".into();
    let agent = runtime(config, net, clock.clone());
    let engine = Engine::new(models, clock);
    engine.add_agent(agent.clone());
    (engine, agent)
}
