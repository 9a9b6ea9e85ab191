//! Deployment configuration, loaded from TOML.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use expertflow_core::backend::ExpertBackendSpec;
use expertflow_core::router::{ExpertId, PoolingMethod, DEFAULT_SQ_SIM};
use expertflow_core::scheduler::{ResourceId, ResourcePool, SchedulingMode};

use crate::error::ConfigError;

pub const DEFAULT_HTTP_TIMEOUT_SECS: u64 = 120;

/// Where an expert's profile-building sentences come from.
///
/// `synthetic:<domain>[:<count>]` draws from the built-in templated corpus;
/// anything else is a path to a file with one sentence per line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DatasetSource {
    Synthetic { domain: String, count: usize },
    File(PathBuf),
}

pub const DEFAULT_SYNTHETIC_SENTENCES: usize = 200;

impl TryFrom<String> for DatasetSource {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        if let Some(rest) = s.strip_prefix("synthetic:") {
            let mut parts = rest.splitn(2, ':');
            let domain = parts.next().unwrap_or_default().trim().to_string();
            if domain.is_empty() {
                return Err(format!("dataset `{s}` names no domain"));
            }
            let count = match parts.next() {
                Some(n) => n
                    .trim()
                    .parse()
                    .map_err(|_| format!("dataset `{s}`: bad sentence count"))?,
                None => DEFAULT_SYNTHETIC_SENTENCES,
            };
            Ok(DatasetSource::Synthetic { domain, count })
        } else if s.trim().is_empty() {
            Err("empty dataset path".into())
        } else {
            Ok(DatasetSource::File(PathBuf::from(s)))
        }
    }
}

impl From<DatasetSource> for String {
    fn from(d: DatasetSource) -> Self {
        match d {
            DatasetSource::Synthetic { domain, count } => format!("synthetic:{domain}:{count}"),
            DatasetSource::File(p) => p.display().to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    #[serde(flatten)]
    pub backend: ExpertBackendSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSource>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecomposerConfig {
    Mock {
        /// Exact query to token-tagged decomposition.
        #[serde(default)]
        rules: BTreeMap<String, String>,
        /// Fall back to the `then` / `and` template rules.
        #[serde(default = "default_true")]
        templates: bool,
    },
    Http {
        endpoint: String,
        model: String,
    },
}

impl Default for DecomposerConfig {
    fn default() -> Self {
        DecomposerConfig::Mock {
            rules: BTreeMap::new(),
            templates: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingConfig {
    Hash {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    Http {
        endpoint: String,
    },
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Hash {
            dim: default_dim(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggregatorConfig {
    /// Use the deployment's base backend.
    #[default]
    Base,
    /// Return the rendered prompt unchanged.
    Identity,
    Http {
        endpoint: String,
        model: String,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Virtual,
    Wall,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSharing {
    /// Each request gets its own copy of the resource pool.
    #[default]
    PerRequest,
    /// Concurrent requests contend for the same resources.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeploymentConfig {
    #[serde(default)]
    pub experts: Vec<ExpertConfig>,
    pub base_backend: ExpertBackendSpec,
    #[serde(default)]
    pub decomposer: DecomposerConfig,
    #[serde(default)]
    pub embedding_provider: EmbeddingConfig,
    #[serde(default)]
    pub aggregator: AggregatorConfig,
    #[serde(default = "default_profile_store")]
    pub profile_store_path: PathBuf,
    #[serde(default = "default_sq_sim")]
    pub sq_sim: f64,
    #[serde(default)]
    pub pooling: PoolingMethod,
    #[serde(default = "default_k")]
    pub centroids_k: usize,
    /// Expert id to resource id. Empty means one dedicated resource per
    /// expert and one for base.
    #[serde(default)]
    pub resources: BTreeMap<String, String>,
    #[serde(default)]
    pub clock: ClockMode,
    #[serde(default)]
    pub scheduling_mode: SchedulingMode,
    #[serde(default)]
    pub pool_sharing: PoolSharing,
    #[serde(default = "default_timeout")]
    pub http_timeout_secs: u64,
}

fn default_true() -> bool {
    true
}
fn default_dim() -> usize {
    256
}
fn default_profile_store() -> PathBuf {
    PathBuf::from("profiles.json")
}
fn default_sq_sim() -> f64 {
    DEFAULT_SQ_SIM
}
fn default_k() -> usize {
    1
}
fn default_timeout() -> u64 {
    DEFAULT_HTTP_TIMEOUT_SECS
}

impl DeploymentConfig {
    /// Minimal deployment around `base_backend`, every other field defaulted.
    pub fn new(base_backend: ExpertBackendSpec) -> Self {
        DeploymentConfig {
            experts: Vec::new(),
            base_backend,
            decomposer: DecomposerConfig::default(),
            embedding_provider: EmbeddingConfig::default(),
            aggregator: AggregatorConfig::default(),
            profile_store_path: default_profile_store(),
            sq_sim: DEFAULT_SQ_SIM,
            pooling: PoolingMethod::default(),
            centroids_k: 1,
            resources: BTreeMap::new(),
            clock: ClockMode::default(),
            scheduling_mode: SchedulingMode::default(),
            pool_sharing: PoolSharing::default(),
            http_timeout_secs: DEFAULT_HTTP_TIMEOUT_SECS,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        if config.profile_store_path.is_relative() {
            if let Some(dir) = path.parent() {
                config.profile_store_path = dir.join(&config.profile_store_path);
            }
        }
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: DeploymentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string_pretty(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut seen = BTreeSet::new();
        for expert in &self.experts {
            let id = &expert.backend.expert_id;
            if id.is_base() {
                return Err(ConfigError::Invalid(format!(
                    "expert id `{}` is reserved",
                    ExpertId::BASE
                )));
            }
            if id.as_str().trim().is_empty() {
                return Err(ConfigError::Invalid("empty expert id".into()));
            }
            if !seen.insert(id.clone()) {
                return Err(ConfigError::Invalid(format!("duplicate expert id `{id}`")));
            }
            expert
                .backend
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if !self.base_backend.expert_id.is_base() {
            return Err(ConfigError::Invalid(format!(
                "base_backend.expert_id must be `{}`",
                ExpertId::BASE
            )));
        }
        self.base_backend
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(-1.0..=1.0).contains(&self.sq_sim) {
            return Err(ConfigError::Invalid(format!(
                "sq_sim {} outside [-1, 1]",
                self.sq_sim
            )));
        }
        if self.centroids_k == 0 {
            return Err(ConfigError::Invalid(
                "centroids_k must be at least 1".into(),
            ));
        }
        if let EmbeddingConfig::Hash { dim: 0, .. } = self.embedding_provider {
            return Err(ConfigError::Invalid(
                "embedding dim must be positive".into(),
            ));
        }
        if !self.resources.is_empty() {
            for id in self.expert_ids().chain([ExpertId::base()]) {
                if !self.resources.contains_key(id.as_str()) {
                    return Err(ConfigError::Invalid(format!(
                        "expert `{id}` has no resource mapping"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn expert_ids(&self) -> impl Iterator<Item = ExpertId> + '_ {
        self.experts.iter().map(|e| e.backend.expert_id.clone())
    }

    pub fn resource_pool(&self) -> ResourcePool {
        if self.resources.is_empty() {
            ResourcePool::dedicated(self.expert_ids().chain([ExpertId::base()]))
        } else {
            ResourcePool::new(
                self.resources
                    .iter()
                    .map(|(e, r)| (ExpertId::new(e.clone()), ResourceId::new(r.clone()))),
            )
        }
    }
}
