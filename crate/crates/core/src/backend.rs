//! Backend interfaces for experts, decomposers and aggregator models, plus
//! their deterministic mock implementations.
//!
//! Mock backends never sleep. They report the latency they would have taken
//! in [`Reply::latency`]; the virtual-clock executor advances simulated time
//! by it and the wall-clock executor sleeps for it.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::{render_decomposition, ContextEntry, DependencyEdge, NodeId};
use crate::router::ExpertId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("no template matches sub-query `{0}`")]
    NoTemplateMatch(String),
    #[error("HTTP failure{}: {message}", .status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    HttpFailure {
        status: Option<u16>,
        message: String,
    },
    #[error("backend timed out after {0:?}")]
    Timeout(Duration),
    #[error("decomposer failure: {0}")]
    DecomposerFailure(String),
    #[error("invalid backend spec: {0}")]
    InvalidSpec(String),
    #[error("no backend registered for expert `{0}`")]
    Unregistered(ExpertId),
}

/// One sub-query invocation: the text plus its predecessors' responses.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub node_id: NodeId,
    pub sub_query: String,
    /// Ascending by source node id.
    pub context: Vec<ContextEntry>,
}

impl BackendRequest {
    pub fn new(node_id: NodeId, sub_query: impl Into<String>, context: Vec<ContextEntry>) -> Self {
        BackendRequest {
            node_id,
            sub_query: sub_query.into(),
            context,
        }
    }

    /// Prompt sent to model-backed experts.
    ///
    /// ```text
    /// Context:
    /// Context[1]: ...
    ///
    /// Question: ...
    /// Answer:
    /// ```
    ///
    /// The `Context:` block is omitted for root sub-queries.
    pub fn compose_prompt(&self) -> String {
        let mut prompt = String::new();
        if !self.context.is_empty() {
            prompt.push_str("Context:\n");
            for entry in &self.context {
                prompt.push_str(&entry.render());
                prompt.push('\n');
            }
            prompt.push('\n');
        }
        prompt.push_str("Question: ");
        prompt.push_str(&self.sub_query);
        prompt.push_str("\nAnswer:");
        prompt
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reply {
    pub text: String,
    /// Simulated service time. Zero for backends whose latency is real.
    pub latency: Duration,
}

impl Reply {
    pub fn instant(text: impl Into<String>) -> Self {
        Reply {
            text: text.into(),
            latency: Duration::ZERO,
        }
    }
}

/// A domain expert (or the base model) answering sub-queries.
pub trait ExpertBackend: Send + Sync {
    fn invoke(&self, request: &BackendRequest) -> Result<Reply, BackendError>;
}

/// A prompt-in, text-out model, as used for aggregation.
pub trait TextModel: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
}

/// Produces the token-tagged decomposition of a complex query.
pub trait Decomposer: Send + Sync {
    fn decompose(&self, query: &str) -> Result<String, BackendError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    MockTemplated,
    MockLatency,
    HttpModel,
}

/// Service-time distribution for latency mocks, in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatencyModel {
    Constant { ms: f64 },
    Uniform { min_ms: f64, max_ms: f64 },
}

impl LatencyModel {
    pub fn validate(&self) -> Result<(), BackendError> {
        let ok = match *self {
            LatencyModel::Constant { ms } => ms.is_finite() && ms >= 0.0,
            LatencyModel::Uniform { min_ms, max_ms } => {
                min_ms.is_finite() && max_ms.is_finite() && min_ms >= 0.0 && min_ms <= max_ms
            }
        };
        if ok {
            Ok(())
        } else {
            Err(BackendError::InvalidSpec(format!(
                "bad latency model {self:?}"
            )))
        }
    }

    /// Deterministic sample keyed on `key`, at microsecond resolution.
    /// Uniform samples always lie within `[min_ms, max_ms]`.
    pub fn sample(&self, key: u64) -> Duration {
        match *self {
            LatencyModel::Constant { ms } => Duration::from_micros(libm::round(ms * 1000.0) as u64),
            LatencyModel::Uniform { min_ms, max_ms } => {
                let lo = libm::ceil(min_ms * 1000.0) as u64;
                let hi = (libm::floor(max_ms * 1000.0) as u64).max(lo);
                let mut state = key;
                let draw = crate::embedder::splitmix64(&mut state);
                Duration::from_micros(lo + draw % (hi - lo + 1))
            }
        }
    }
}

/// Declarative description of one expert backend, as found in deployment
/// configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertBackendSpec {
    pub expert_id: ExpertId,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Model name sent to HTTP backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyModel>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub templates: BTreeMap<String, String>,
    #[serde(default)]
    pub seed: u64,
}

impl ExpertBackendSpec {
    pub fn mock_latency(expert_id: impl Into<ExpertId>, latency: LatencyModel) -> Self {
        ExpertBackendSpec {
            expert_id: expert_id.into(),
            kind: BackendKind::MockLatency,
            endpoint: None,
            model: None,
            latency: Some(latency),
            templates: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn mock_templated(
        expert_id: impl Into<ExpertId>,
        templates: BTreeMap<String, String>,
    ) -> Self {
        ExpertBackendSpec {
            expert_id: expert_id.into(),
            kind: BackendKind::MockTemplated,
            endpoint: None,
            model: None,
            latency: None,
            templates,
            seed: 0,
        }
    }

    pub fn http(
        expert_id: impl Into<ExpertId>,
        endpoint: impl Into<String>,
        model: impl Into<String>,
    ) -> Self {
        ExpertBackendSpec {
            expert_id: expert_id.into(),
            kind: BackendKind::HttpModel,
            endpoint: Some(endpoint.into()),
            model: Some(model.into()),
            latency: None,
            templates: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if let Some(latency) = &self.latency {
            latency.validate()?;
        }
        match self.kind {
            BackendKind::HttpModel if self.endpoint.as_deref().is_none_or(str::is_empty) => {
                Err(BackendError::InvalidSpec(format!(
                    "expert `{}`: http_model requires an endpoint",
                    self.expert_id
                )))
            }
            BackendKind::MockLatency if self.latency.is_none() => {
                Err(BackendError::InvalidSpec(format!(
                    "expert `{}`: mock_latency requires a latency model",
                    self.expert_id
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Collapses whitespace runs to single spaces and trims.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Answers from a lookup table keyed on the normalised sub-query.
#[derive(Clone, Debug)]
pub struct MockTemplated {
    table: BTreeMap<String, String>,
    latency: Option<LatencyModel>,
    seed: u64,
}

impl MockTemplated {
    pub fn new<I, K, V>(entries: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        MockTemplated {
            table: entries
                .into_iter()
                .map(|(k, v)| (normalize_whitespace(k.as_ref()), v.into()))
                .collect(),
            latency: None,
            seed: 0,
        }
    }

    pub fn with_latency(mut self, latency: LatencyModel, seed: u64) -> Self {
        self.latency = Some(latency);
        self.seed = seed;
        self
    }
}

impl ExpertBackend for MockTemplated {
    fn invoke(&self, request: &BackendRequest) -> Result<Reply, BackendError> {
        let key = normalize_whitespace(&request.sub_query);
        let answer = self
            .table
            .get(&key)
            .ok_or_else(|| BackendError::NoTemplateMatch(request.sub_query.clone()))?;
        let mut text = answer.clone();
        if !request.context.is_empty() {
            let ids: Vec<String> = request
                .context
                .iter()
                .map(|c| c.source.to_string())
                .collect();
            text.push_str(&format!(" [context: {}]", ids.join(", ")));
        }
        let latency = self.latency.map_or(Duration::ZERO, |l| {
            l.sample(latency_key(self.seed, request))
        });
        Ok(Reply { text, latency })
    }
}

/// Returns a digest of the request after a sampled service time.
#[derive(Clone, Debug)]
pub struct MockLatency {
    expert_id: ExpertId,
    latency: LatencyModel,
    seed: u64,
}

impl MockLatency {
    pub fn new(expert_id: ExpertId, latency: LatencyModel, seed: u64) -> Self {
        MockLatency {
            expert_id,
            latency,
            seed,
        }
    }
}

impl ExpertBackend for MockLatency {
    fn invoke(&self, request: &BackendRequest) -> Result<Reply, BackendError> {
        Ok(Reply {
            text: format!(
                "[{}] answer to sub-query {} ({})",
                self.expert_id,
                request.node_id,
                request_digest(request)
            ),
            latency: self.latency.sample(latency_key(self.seed, request)),
        })
    }
}

/// Hex SHA-256 prefix over node id, sub-query and context.
pub fn request_digest(request: &BackendRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(request.node_id.get().to_le_bytes());
    hasher.update(request.sub_query.as_bytes());
    hasher.update([0u8]);
    for entry in &request.context {
        hasher.update(entry.source.get().to_le_bytes());
        hasher.update(entry.response.as_bytes());
        hasher.update([0u8]);
    }
    let bytes = hasher.finalize();
    bytes.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn latency_key(seed: u64, request: &BackendRequest) -> u64 {
    let mut key = crate::embedder::fnv1a(request.sub_query.as_bytes());
    key ^= u64::from(request.node_id.get()).wrapping_mul(0xA24B_AED4_963E_E407);
    key ^ seed.rotate_left(17)
}

/// Builds the mock backend described by `spec`. HTTP backends are provided
/// by the IO crate.
pub fn build_mock(spec: &ExpertBackendSpec) -> Result<Arc<dyn ExpertBackend>, BackendError> {
    spec.validate()?;
    match spec.kind {
        BackendKind::MockTemplated => {
            let mut mock = MockTemplated::new(spec.templates.iter().map(|(k, v)| (k, v.clone())));
            if let Some(latency) = spec.latency {
                mock = mock.with_latency(latency, spec.seed);
            }
            Ok(Arc::new(mock))
        }
        BackendKind::MockLatency => Ok(Arc::new(MockLatency::new(
            spec.expert_id.clone(),
            spec.latency.expect("validated"),
            spec.seed,
        ))),
        BackendKind::HttpModel => Err(BackendError::InvalidSpec(format!(
            "expert `{}`: http_model backends are not available in the core crate",
            spec.expert_id
        ))),
    }
}

/// Expert id to backend lookup.
#[derive(Clone, Default)]
pub struct BackendRegistry {
    backends: BTreeMap<ExpertId, Arc<dyn ExpertBackend>>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, expert: ExpertId, backend: Arc<dyn ExpertBackend>) -> &mut Self {
        self.backends.insert(expert, backend);
        self
    }

    pub fn with(mut self, expert: impl Into<ExpertId>, backend: Arc<dyn ExpertBackend>) -> Self {
        self.register(expert.into(), backend);
        self
    }

    pub fn get(&self, expert: &ExpertId) -> Option<&Arc<dyn ExpertBackend>> {
        self.backends.get(expert)
    }

    pub fn invoke(
        &self,
        expert: &ExpertId,
        request: &BackendRequest,
    ) -> Result<Reply, BackendError> {
        self.get(expert)
            .ok_or_else(|| BackendError::Unregistered(expert.clone()))?
            .invoke(request)
    }

    pub fn experts(&self) -> impl Iterator<Item = &ExpertId> {
        self.backends.keys()
    }
}

/// Returns its prompt unchanged; makes aggregation output golden-testable.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityModel;

impl TextModel for IdentityModel {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        Ok(prompt.to_string())
    }
}

/// Uses an expert backend as a plain text model (prompt as the sub-query,
/// no context).
pub struct ExpertAsModel(pub Arc<dyn ExpertBackend>);

impl TextModel for ExpertAsModel {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        Ok(self
            .0
            .invoke(&BackendRequest::new(NodeId(0), prompt, Vec::new()))?
            .text)
    }
}

/// Rule-table decomposer.
///
/// Exact (whitespace-normalised) rules win. Otherwise, with template rules
/// enabled, `A then B then C` becomes a chain and `A and B` independent
/// sub-queries; anything else is a single sub-query.
#[derive(Clone, Debug, Default)]
pub struct MockDecomposer {
    rules: BTreeMap<String, String>,
    templates: bool,
}

impl MockDecomposer {
    pub fn new() -> Self {
        MockDecomposer {
            rules: BTreeMap::new(),
            templates: true,
        }
    }

    pub fn without_templates(mut self) -> Self {
        self.templates = false;
        self
    }

    pub fn rule(mut self, query: &str, raw: impl Into<String>) -> Self {
        self.insert(query, raw);
        self
    }

    pub fn insert(&mut self, query: &str, raw: impl Into<String>) {
        self.rules.insert(normalize_whitespace(query), raw.into());
    }
}

impl Decomposer for MockDecomposer {
    fn decompose(&self, query: &str) -> Result<String, BackendError> {
        let key = normalize_whitespace(query);
        if key.is_empty() {
            return Err(BackendError::DecomposerFailure("empty query".into()));
        }
        if let Some(raw) = self.rules.get(&key) {
            return Ok(raw.clone());
        }
        if !self.templates {
            return Err(BackendError::DecomposerFailure(format!(
                "no rule for `{key}`"
            )));
        }
        let split = |sep: &str| -> Vec<String> {
            key.split(sep)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        };
        let chain = split(" then ");
        if chain.len() > 1 {
            let edges: Vec<DependencyEdge> = (1..chain.len() as u32)
                .map(|i| DependencyEdge::new(i, i + 1))
                .collect();
            return Ok(render_decomposition(&chain, &edges));
        }
        let parts = split(" and ");
        Ok(render_decomposition(&parts, &[]))
    }
}
