//! MindOS agent runtime: a Global-Workspace cycle engine over a foundation
//! model registry, tools, long-term memory and a language user interface.

pub mod clock;
pub mod driver;
pub mod foundation;
pub mod kernel;
pub mod lui;
pub mod memory;
pub mod net;
pub mod orchestrator;
pub mod thought_stream;
pub mod tools;
pub mod working_memory;

pub use kernel::{AgentConfig, Directive, StoreKind};
pub use orchestrator::{AgentRuntime, Engine, SessionError, SessionMode};
