use std::path::PathBuf;

use expertflow_core::aggregator::AggregationError;
use expertflow_core::backend::BackendError;
use expertflow_core::graph::{GraphError, NodeId};
use expertflow_core::router::RouterError;
use expertflow_core::scheduler::{ExecutionError, SchedulerError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("profile store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("profile store {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("expert `{0}` has neither a stored profile nor a dataset")]
    MissingDataset(String),
    #[error("expert `{expert}`: {source}")]
    Build {
        expert: String,
        #[source]
        source: RouterError,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Decompose(BackendError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Routing(#[from] RouterError),
    #[error(transparent)]
    Execution(#[from] ExecutionError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Profiles(#[from] ProfileError),
    #[error("backend setup: {0}")]
    Backend(BackendError),
}

impl PipelineError {
    /// Stable machine-readable error code for API responses.
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Decompose(_) => "decomposer_failure",
            PipelineError::Graph(_) => "bad_decomposition",
            PipelineError::Routing(_) => "routing_failure",
            PipelineError::Execution(e) => match e.error {
                SchedulerError::BackendFailure { .. } => "backend_failure",
                _ => "scheduler_failure",
            },
            PipelineError::Aggregation(_) => "aggregation_failure",
            PipelineError::Config(_) => "config_error",
            PipelineError::Profiles(_) => "profile_error",
            PipelineError::Backend(_) => "backend_setup_failure",
        }
    }

    pub fn node_id(&self) -> Option<NodeId> {
        match self {
            PipelineError::Routing(RouterError::AtNode { node, .. }) => Some(*node),
            PipelineError::Execution(e) => e.node(),
            _ => None,
        }
    }
}
