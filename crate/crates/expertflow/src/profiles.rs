//! Expert profile store: building centroids from datasets and persisting
//! them as JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use expertflow_core::router::{
    build_profile, Embedding, EmbeddingProvider, ExpertId, ExpertProfile, PoolingMethod,
};

use crate::config::{DatasetSource, DeploymentConfig};
use crate::error::ProfileError;
use crate::workload;

/// Texts per embedding request when building profiles.
const EMBED_BATCH: usize = 64;

/// Seed for synthetic profile corpora; fixed so profiles are reproducible.
pub const SYNTHETIC_CORPUS_SEED: u64 = 0x5eed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StoredProfile {
    expert_id: ExpertId,
    pooling: PoolingMethod,
    dim: usize,
    centroids: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct StoreFile {
    profiles: Vec<StoredProfile>,
}

pub fn save(path: &Path, profiles: &[ExpertProfile]) -> Result<(), ProfileError> {
    let file = StoreFile {
        profiles: profiles
            .iter()
            .map(|p| StoredProfile {
                expert_id: p.expert_id().clone(),
                pooling: p.pooling(),
                dim: p.dim(),
                centroids: p.centroids().iter().map(|c| c.values().to_vec()).collect(),
            })
            .collect(),
    };
    let io = |source| ProfileError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut text = serde_json::to_string_pretty(&file).expect("profiles serialize");
    text.push('\n');
    fs::write(path, text).map_err(io)
}

pub fn load(path: &Path) -> Result<Vec<ExpertProfile>, ProfileError> {
    let text = fs::read_to_string(path).map_err(|source| ProfileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let format = |message: String| ProfileError::Format {
        path: path.to_path_buf(),
        message,
    };
    let file: StoreFile = serde_json::from_str(&text).map_err(|e| format(e.to_string()))?;
    file.profiles
        .into_iter()
        .map(|p| {
            let centroids = p
                .centroids
                .into_iter()
                .map(Embedding::new)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| format(format!("expert `{}`: {e}", p.expert_id)))?;
            let profile = ExpertProfile::new(p.expert_id.clone(), centroids, p.pooling)
                .map_err(|e| format(format!("expert `{}`: {e}", p.expert_id)))?;
            if profile.dim() != p.dim {
                return Err(format(format!(
                    "expert `{}`: declared dim {} but centroids have {}",
                    p.expert_id,
                    p.dim,
                    profile.dim()
                )));
            }
            Ok(profile)
        })
        .collect()
}

/// Profile-building sentences for one dataset. Relative file paths resolve
/// against `base_dir`.
pub fn dataset_sentences(
    source: &DatasetSource,
    base_dir: Option<&Path>,
) -> Result<Vec<String>, ProfileError> {
    match source {
        DatasetSource::Synthetic { domain, count } => {
            workload::domain_corpus(domain, *count, SYNTHETIC_CORPUS_SEED).ok_or_else(|| {
                ProfileError::Format {
                    path: PathBuf::from(format!("synthetic:{domain}")),
                    message: format!("unknown synthetic domain `{domain}`"),
                }
            })
        }
        DatasetSource::File(path) => {
            let path = match base_dir {
                Some(dir) if path.is_relative() => dir.join(path),
                _ => path.clone(),
            };
            let text =
                fs::read_to_string(&path).map_err(|source| ProfileError::Io { path, source })?;
            Ok(text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect())
        }
    }
}

pub fn build_from_sentences<P: EmbeddingProvider + ?Sized>(
    expert: ExpertId,
    sentences: &[String],
    provider: &P,
    k: usize,
    pooling: PoolingMethod,
) -> Result<ExpertProfile, ProfileError> {
    let wrap = |source| ProfileError::Build {
        expert: expert.to_string(),
        source,
    };
    let mut embeddings = Vec::with_capacity(sentences.len());
    for batch in sentences.chunks(EMBED_BATCH) {
        let texts: Vec<&str> = batch.iter().map(String::as_str).collect();
        embeddings.extend(provider.embed(&texts).map_err(wrap)?);
    }
    build_profile(expert.clone(), &embeddings, k, pooling).map_err(wrap)
}

/// Builds a profile for every configured expert, in configuration order.
pub fn build_all<P: EmbeddingProvider + ?Sized>(
    config: &DeploymentConfig,
    provider: &P,
    base_dir: Option<&Path>,
) -> Result<Vec<ExpertProfile>, ProfileError> {
    config
        .experts
        .iter()
        .map(|expert| {
            let id = expert.backend.expert_id.clone();
            let source = expert
                .dataset
                .as_ref()
                .ok_or_else(|| ProfileError::MissingDataset(id.to_string()))?;
            let sentences = dataset_sentences(source, base_dir)?;
            build_from_sentences(id, &sentences, provider, config.centroids_k, config.pooling)
        })
        .collect()
}

/// Loads the configured store if it holds a compatible profile for every
/// expert; otherwise builds all profiles and writes the store.
pub fn load_or_build<P: EmbeddingProvider + ?Sized>(
    config: &DeploymentConfig,
    provider: &P,
    base_dir: Option<&Path>,
) -> Result<Vec<ExpertProfile>, ProfileError> {
    let path = &config.profile_store_path;
    if path.exists() {
        let stored = load(path)?;
        if let Some(ordered) = select(config, stored) {
            log::info!(
                "loaded {} expert profiles from {}",
                ordered.len(),
                path.display()
            );
            return Ok(ordered);
        }
        log::info!(
            "profile store {} does not match the configuration; rebuilding",
            path.display()
        );
    }
    let built = build_all(config, provider, base_dir)?;
    save(path, &built)?;
    log::info!(
        "built {} expert profiles into {}",
        built.len(),
        path.display()
    );
    Ok(built)
}

/// Stored profiles reordered to configuration order, or `None` when any
/// expert is missing or was built with different settings.
fn select(config: &DeploymentConfig, mut stored: Vec<ExpertProfile>) -> Option<Vec<ExpertProfile>> {
    let mut ordered = Vec::with_capacity(config.experts.len());
    for id in config.expert_ids() {
        let index = stored.iter().position(|p| *p.expert_id() == id)?;
        let profile = stored.swap_remove(index);
        if profile.pooling() != config.pooling || profile.centroids().len() != config.centroids_k {
            return None;
        }
        ordered.push(profile);
    }
    Some(ordered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExpertConfig;
    use expertflow_core::backend::{ExpertBackendSpec, LatencyModel};
    use expertflow_core::embedder::HashEmbedder;

    fn config(dir: &Path) -> DeploymentConfig {
        let latency = LatencyModel::Constant { ms: 1.0 };
        let mut c = DeploymentConfig::new(ExpertBackendSpec::mock_latency("base", latency));
        c.profile_store_path = dir.join("nested/profiles.json");
        c.centroids_k = 2;
        c.experts = ["chemistry", "math"]
            .iter()
            .map(|d| ExpertConfig {
                backend: ExpertBackendSpec::mock_latency(*d, latency),
                dataset: Some(DatasetSource::Synthetic {
                    domain: d.to_string(),
                    count: 20,
                }),
            })
            .collect();
        c
    }

    #[test]
    fn build_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path());
        let provider = HashEmbedder::new(32, 0, c.pooling);
        let built = load_or_build(&c, &provider, None).unwrap();
        assert_eq!(built.len(), 2);
        assert_eq!(built[0].centroids().len(), 2);
        let loaded = load(&c.profile_store_path).unwrap();
        assert_eq!(loaded, built);
        assert_eq!(load_or_build(&c, &provider, None).unwrap(), built);
    }

    #[test]
    fn mismatched_store_is_rebuilt() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path());
        let provider = HashEmbedder::new(16, 0, c.pooling);
        load_or_build(&c, &provider, None).unwrap();
        c.centroids_k = 1;
        let rebuilt = load_or_build(&c, &provider, None).unwrap();
        assert_eq!(rebuilt[0].centroids().len(), 1);
        assert_eq!(load(&c.profile_store_path).unwrap(), rebuilt);
    }

    #[test]
    fn dataset_files_resolve_relative_to_base_dir() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("bio.txt"),
            "enzyme kinetics\n\n  ribosome assembly  \n",
        )
        .unwrap();
        let sentences =
            dataset_sentences(&DatasetSource::File("bio.txt".into()), Some(dir.path())).unwrap();
        assert_eq!(sentences, vec!["enzyme kinetics", "ribosome assembly"]);
    }

    #[test]
    fn missing_dataset_and_bad_store_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path());
        c.experts[0].dataset = None;
        let provider = HashEmbedder::new(8, 0, c.pooling);
        assert!(matches!(
            build_all(&c, &provider, None),
            Err(ProfileError::MissingDataset(_))
        ));
        let bad = dir.path().join("bad.json");
        fs::write(&bad, "{\"profiles\": [{\"expert_id\": \"x\", \"pooling\": \"mean_pooling\", \"dim\": 3, \"centroids\": [[1, 0]]}]}").unwrap();
        assert!(matches!(load(&bad), Err(ProfileError::Format { .. })));
    }
}
