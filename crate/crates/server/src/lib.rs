//! HTTP service and operations tooling for generative visual search.

pub mod analyze;
pub mod config;
pub mod error;
pub mod routes;
pub mod serve;
pub mod state;

pub use config::{ServiceConfig, SESSION_HEADER};
pub use serve::{run, start, RunningServer};
pub use state::{build_embedder, AppState, ServeError};
