//! Deployment crate for the expertflow query pipeline: configuration, HTTP
//! model clients, the wall-clock executor, profile storage, synthetic
//! benchmarks, the query service and the CLI plumbing behind it.

pub mod bench;
pub mod config;
pub mod documents;
pub mod error;
pub mod executor;
pub mod http;
pub mod pipeline;
pub mod profiles;
pub mod service;
pub mod workload;

pub use config::DeploymentConfig;
pub use error::PipelineError;
pub use pipeline::{Pipeline, QueryOutcome};
