//! HTTP service, on-disk persistence and command line for the MindOS runtime.

pub mod app;
pub mod bundle;
pub mod cli;
pub mod http;
pub mod replay;
pub mod settings;
pub mod storage;

pub use app::{Service, ServiceError};
