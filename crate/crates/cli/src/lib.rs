//! HTTP service, replay harness and command-line front end.

pub mod api;
pub mod cli;
pub mod replay;
pub mod service_config;

pub use api::{router, ApiError, AppState};
pub use replay::{run_replay, ReplayOptions, ReplayReport};
pub use service_config::{BackendDescriptor, ServiceConfig};
