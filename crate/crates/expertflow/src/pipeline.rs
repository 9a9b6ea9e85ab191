//! End-to-end query handling: decompose, build the graph, route, execute,
//! aggregate.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use expertflow_core::aggregator::{aggregate, AggregationInput};
use expertflow_core::backend::{
    build_mock, BackendError, BackendKind, BackendRegistry, Decomposer, ExpertAsModel,
    ExpertBackend, ExpertBackendSpec, IdentityModel, MockDecomposer, TextModel,
};
use expertflow_core::embedder::HashEmbedder;
use expertflow_core::graph::{graph_from_decomposition, NodeId, QueryGraph};
use expertflow_core::router::{
    assign_experts, EmbeddingProvider, ExpertId, ExpertProfile, RoutingDecision,
};
use expertflow_core::scheduler::{ExecutionError, ExecutionResult, ResourcePool};
use expertflow_core::sim;

use crate::config::{
    AggregatorConfig, ClockMode, DecomposerConfig, DeploymentConfig, EmbeddingConfig, PoolSharing,
};
use crate::error::PipelineError;
use crate::executor::{self, ResourceLocks};
use crate::http::{HttpDecomposer, HttpEmbedder, HttpModel};
use crate::profiles;

pub type SharedEmbedder = Arc<dyn EmbeddingProvider + Send + Sync>;

/// The pluggable parts of a pipeline. Built from configuration, but each
/// field can be swapped before assembling the pipeline.
#[derive(Clone)]
pub struct Components {
    pub decomposer: Arc<dyn Decomposer>,
    pub embedder: SharedEmbedder,
    /// Every configured expert plus `base`.
    pub backends: BackendRegistry,
    pub aggregator: Arc<dyn TextModel>,
}

fn backend_for(
    spec: &ExpertBackendSpec,
    timeout: Duration,
) -> Result<Arc<dyn ExpertBackend>, BackendError> {
    match spec.kind {
        BackendKind::HttpModel => {
            spec.validate()?;
            Ok(Arc::new(http_model(spec, timeout)))
        }
        _ => build_mock(spec),
    }
}

fn http_model(spec: &ExpertBackendSpec, timeout: Duration) -> HttpModel {
    HttpModel::new(
        spec.endpoint.clone().unwrap_or_default(),
        spec.model.clone().unwrap_or_default(),
        timeout,
    )
}

impl Components {
    pub fn from_config(config: &DeploymentConfig) -> Result<Self, PipelineError> {
        let timeout = Duration::from_secs(config.http_timeout_secs);
        let decomposer: Arc<dyn Decomposer> =
            match &config.decomposer {
                DecomposerConfig::Mock { rules, templates } => {
                    let mut d = MockDecomposer::new();
                    if !templates {
                        d = d.without_templates();
                    }
                    for (query, raw) in rules {
                        d.insert(query, raw.clone());
                    }
                    Arc::new(d)
                }
                DecomposerConfig::Http { endpoint, model } => Arc::new(HttpDecomposer(
                    HttpModel::new(endpoint.clone(), model.clone(), timeout),
                )),
            };
        let embedder: SharedEmbedder = match &config.embedding_provider {
            EmbeddingConfig::Hash { dim, seed } => {
                Arc::new(HashEmbedder::new(*dim, *seed, config.pooling))
            }
            EmbeddingConfig::Http { endpoint } => {
                Arc::new(HttpEmbedder::new(endpoint.clone(), timeout))
            }
        };
        let mut backends = BackendRegistry::new();
        for expert in &config.experts {
            let backend = backend_for(&expert.backend, timeout).map_err(PipelineError::Backend)?;
            backends.register(expert.backend.expert_id.clone(), backend);
        }
        let base = backend_for(&config.base_backend, timeout).map_err(PipelineError::Backend)?;
        backends.register(ExpertId::base(), base.clone());
        let aggregator: Arc<dyn TextModel> = match &config.aggregator {
            AggregatorConfig::Base if config.base_backend.kind == BackendKind::HttpModel => {
                Arc::new(http_model(&config.base_backend, timeout))
            }
            AggregatorConfig::Base => Arc::new(ExpertAsModel(base)),
            AggregatorConfig::Identity => Arc::new(IdentityModel),
            AggregatorConfig::Http { endpoint, model } => {
                Arc::new(HttpModel::new(endpoint.clone(), model.clone(), timeout))
            }
        };
        Ok(Components {
            decomposer,
            embedder,
            backends,
            aggregator,
        })
    }
}

/// A decomposed and routed query, ready to execute.
#[derive(Clone, Debug)]
pub struct Plan {
    pub graph: QueryGraph,
    pub routing: Vec<(NodeId, RoutingDecision)>,
}

#[derive(Clone, Debug)]
pub struct QueryOutcome {
    pub answer: String,
    pub routing: Vec<(NodeId, RoutingDecision)>,
    pub result: ExecutionResult,
}

pub struct Pipeline {
    config: DeploymentConfig,
    components: Components,
    profiles: Vec<ExpertProfile>,
    pool: ResourcePool,
    locks: Option<Arc<ResourceLocks>>,
}

impl Pipeline {
    pub fn new(
        config: DeploymentConfig,
        components: Components,
        profiles: Vec<ExpertProfile>,
    ) -> Self {
        let pool = config.resource_pool();
        let locks = (config.pool_sharing == PoolSharing::Global)
            .then(|| Arc::new(ResourceLocks::for_pool(&pool)));
        Pipeline {
            config,
            components,
            profiles,
            pool,
            locks,
        }
    }

    /// Components from configuration; profiles loaded from the store or
    /// built from the expert datasets.
    pub fn from_config(
        config: DeploymentConfig,
        base_dir: Option<&Path>,
    ) -> Result<Self, PipelineError> {
        let components = Components::from_config(&config)?;
        let profiles = profiles::load_or_build(&config, &components.embedder, base_dir)?;
        Ok(Self::new(config, components, profiles))
    }

    pub fn load(config_path: &Path) -> Result<Self, PipelineError> {
        let config = DeploymentConfig::load(config_path)?;
        Self::from_config(config, config_path.parent())
    }

    pub fn config(&self) -> &DeploymentConfig {
        &self.config
    }

    pub fn components(&self) -> &Components {
        &self.components
    }

    pub fn profiles(&self) -> &[ExpertProfile] {
        &self.profiles
    }

    pub fn plan(&self, query: &str) -> Result<Plan, PipelineError> {
        let raw = self
            .components
            .decomposer
            .decompose(query)
            .map_err(PipelineError::Decompose)?;
        let graph = graph_from_decomposition(query, &raw)?;
        self.route(graph)
    }

    /// Routes every node of an unassigned graph.
    pub fn route(&self, mut graph: QueryGraph) -> Result<Plan, PipelineError> {
        let routing = if self.profiles.is_empty() {
            // Without experts every sub-query goes to base.
            for id in graph.node_ids().collect::<Vec<_>>() {
                graph.assign_expert(id, ExpertId::base())?;
            }
            Vec::new()
        } else {
            assign_experts(
                &mut graph,
                &self.components.embedder,
                &self.profiles,
                self.config.sq_sim,
            )?
        };
        Ok(Plan { graph, routing })
    }

    /// Parallel execution under the configured clock and scheduling mode.
    pub fn execute(&self, graph: QueryGraph) -> Result<ExecutionResult, ExecutionError> {
        let backends = &self.components.backends;
        let mode = self.config.scheduling_mode;
        match self.config.clock {
            ClockMode::Virtual => sim::execute(graph, self.pool.clone(), backends, mode),
            ClockMode::Wall => executor::execute(
                graph,
                self.pool.clone(),
                backends,
                mode,
                self.locks.as_ref(),
            ),
        }
    }

    /// Serial baseline under the configured clock.
    pub fn execute_sequential(&self, graph: QueryGraph) -> Result<ExecutionResult, ExecutionError> {
        let backends = &self.components.backends;
        match self.config.clock {
            ClockMode::Virtual => sim::execute_sequential(graph, backends),
            ClockMode::Wall => executor::execute_sequential(graph, backends),
        }
    }

    pub fn aggregate(&self, result: &ExecutionResult) -> Result<String, PipelineError> {
        let input = AggregationInput::from_execution(result);
        Ok(aggregate(&input, self.components.aggregator.as_ref())?)
    }

    pub fn run(&self, query: &str) -> Result<QueryOutcome, PipelineError> {
        let Plan { graph, routing } = self.plan(query)?;
        let result = self.execute(graph)?;
        let answer = self.aggregate(&result)?;
        Ok(QueryOutcome {
            answer,
            routing,
            result,
        })
    }
}
