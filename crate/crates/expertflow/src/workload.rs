//! Seeded synthetic workloads: per-domain sentence corpora for building
//! expert profiles, and templated multi-expert benchmarks whose gold
//! decompositions are known by construction.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use expertflow_core::backend::{ExpertBackendSpec, LatencyModel};
use expertflow_core::graph::{render_decomposition, DependencyEdge};
use expertflow_core::router::ExpertId;

use crate::config::{
    AggregatorConfig, DatasetSource, DecomposerConfig, DeploymentConfig, EmbeddingConfig,
    ExpertConfig,
};

/// Expert domains, in the order experts are enabled.
pub const EXPERT_DOMAINS: [&str; 3] = ["chemistry", "biology", "math"];
/// Domains no expert covers; their sub-queries should fall back to base.
pub const UNRELATED_DOMAINS: [&str; 2] = ["cooking", "sports"];

const WORDS_PER_SUB_QUERY: usize = 4;

pub fn vocabulary(domain: &str) -> Option<&'static [&'static str]> {
    Some(match domain {
        "chemistry" => &[
            "molarity",
            "enthalpy",
            "catalyst",
            "isotope",
            "oxidation",
            "titration",
        ],
        "biology" => &[
            "enzyme",
            "mitochondria",
            "chromosome",
            "photosynthesis",
            "ribosome",
            "antibody",
        ],
        "math" => &[
            "integral",
            "eigenvalue",
            "polynomial",
            "derivative",
            "theorem",
            "logarithm",
        ],
        "cooking" => &[
            "simmer",
            "pastry",
            "marinade",
            "saffron",
            "braise",
            "sourdough",
        ],
        "sports" => &[
            "marathon",
            "referee",
            "offside",
            "slalom",
            "dribble",
            "velodrome",
        ],
        _ => return None,
    })
}

fn sub_query(rng: &mut impl Rng, domain: &str, dependent: bool) -> String {
    let vocab = vocabulary(domain).expect("known domain");
    let words: Vec<&str> = vocab
        .choose_multiple(rng, WORDS_PER_SUB_QUERY)
        .copied()
        .collect();
    let prefix = if dependent {
        "Given that, what"
    } else {
        "What"
    };
    format!(
        "{prefix} links {}, {}, {} with {}?",
        words[0], words[1], words[2], words[3]
    )
}

/// `count` templated sentences for one domain. Half use the dependent
/// phrasing so profiles cover both sub-query shapes.
pub fn domain_corpus(domain: &str, count: usize, seed: u64) -> Option<Vec<String>> {
    vocabulary(domain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ crate::workload::domain_salt(domain));
    Some(
        (0..count)
            .map(|i| sub_query(&mut rng, domain, i % 2 == 1))
            .collect(),
    )
}

fn domain_salt(domain: &str) -> u64 {
    domain.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkShape {
    /// Independent sub-queries, one per expert domain.
    IndependentP,
    /// Sub-queries with cross-domain dependencies.
    DependentAll,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Chains and diamonds, chosen per query.
    #[default]
    Mixed,
    Chain,
    /// `1 -> 2, 1 -> 3, 2 -> 4, 3 -> 4`.
    Diamond,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub shape: BenchmarkShape,
    pub num_experts: usize,
    pub num_queries: usize,
    pub latency: LatencyModel,
    pub seed: u64,
    /// Probability that a query carries one sub-query from an unrelated
    /// domain, gold-labelled `base`.
    #[serde(default = "default_unrelated")]
    pub unrelated_fraction: f64,
    /// Dependency structure for `DependentAll`; ignored for `IndependentP`.
    #[serde(default)]
    pub topology: Topology,
}

pub const DEFAULT_UNRELATED_FRACTION: f64 = 0.1;

fn default_unrelated() -> f64 {
    DEFAULT_UNRELATED_FRACTION
}

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("invalid benchmark spec: {0}")]
    InvalidSpec(String),
    #[error("benchmark line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl BenchmarkSpec {
    pub fn new(
        shape: BenchmarkShape,
        num_experts: usize,
        num_queries: usize,
        latency: LatencyModel,
        seed: u64,
    ) -> Self {
        BenchmarkSpec {
            shape,
            num_experts,
            num_queries,
            latency,
            seed,
            unrelated_fraction: DEFAULT_UNRELATED_FRACTION,
            topology: Topology::Mixed,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(2..=3).contains(&self.num_experts) {
            return Err(WorkloadError::InvalidSpec(
                "num_experts must be 2 or 3".into(),
            ));
        }
        if self.num_queries == 0 {
            return Err(WorkloadError::InvalidSpec(
                "num_queries must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.unrelated_fraction) {
            return Err(WorkloadError::InvalidSpec(
                "unrelated_fraction must be in [0, 1]".into(),
            ));
        }
        self.latency
            .validate()
            .map_err(|e| WorkloadError::InvalidSpec(e.to_string()))
    }

    pub fn domains(&self) -> &'static [&'static str] {
        &EXPERT_DOMAINS[..self.num_experts]
    }
}

/// One benchmark query with its known decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub query: String,
    pub gold_subqueries: Vec<String>,
    pub gold_edges: Vec<[u32; 2]>,
    /// Expert id per sub-query; `base` for unrelated-domain ones.
    pub gold_domains: Vec<String>,
}

impl BenchmarkRecord {
    pub fn edges(&self) -> Vec<DependencyEdge> {
        self.gold_edges
            .iter()
            .map(|[a, b]| DependencyEdge::new(*a, *b))
            .collect()
    }

    /// Token-tagged decomposition a perfect decomposer would emit.
    pub fn gold_decomposition(&self) -> String {
        render_decomposition(&self.gold_subqueries, &self.edges())
    }
}

pub fn generate_benchmark(spec: &BenchmarkSpec) -> Result<Vec<BenchmarkRecord>, WorkloadError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.num_queries)
        .map(|_| generate_one(spec, &mut rng))
        .collect())
}

fn generate_one(spec: &BenchmarkSpec, rng: &mut ChaCha8Rng) -> BenchmarkRecord {
    let mut domains: Vec<&str> = spec.domains().to_vec();
    domains.shuffle(rng);

    let (mut labels, edges, joiner): (Vec<&str>, Vec<[u32; 2]>, &str) = match spec.shape {
        BenchmarkShape::IndependentP => (domains, Vec::new(), " and "),
        BenchmarkShape::DependentAll => {
            let diamond = match spec.topology {
                Topology::Chain => false,
                Topology::Diamond => true,
                Topology::Mixed => rng.random_bool(0.5),
            };
            if diamond {
                // The two middle nodes always sit in different domains.
                let labels = match domains.as_slice() {
                    [a, b] => vec![*a, *a, *b, *b],
                    [a, b, c] => vec![*a, *b, *c, *a],
                    _ => unreachable!("validated expert count"),
                };
                (labels, vec![[1, 2], [1, 3], [2, 4], [3, 4]], " ; ")
            } else {
                let len = domains.len() + rng.random_range(0..=1usize);
                let labels: Vec<&str> = (0..len).map(|i| domains[i % domains.len()]).collect();
                let edges = (1..len as u32).map(|i| [i, i + 1]).collect();
                (labels, edges, " then ")
            }
        }
    };

    if rng.random_bool(spec.unrelated_fraction) {
        let slot = rng.random_range(0..labels.len());
        labels[slot] = UNRELATED_DOMAINS.choose(rng).expect("non-empty");
    }

    let gold_subqueries: Vec<String> = labels
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let dependent = edges.iter().any(|[_, to]| *to as usize == i + 1);
            sub_query(rng, d, dependent)
        })
        .collect();
    let gold_domains = labels
        .iter()
        .map(|d| {
            if UNRELATED_DOMAINS.contains(d) {
                ExpertId::BASE.to_string()
            } else {
                d.to_string()
            }
        })
        .collect();
    BenchmarkRecord {
        query: gold_subqueries.join(joiner),
        gold_subqueries,
        gold_edges: edges,
        gold_domains,
    }
}

/// Line-delimited JSON, one record per line.
pub fn write_benchmark<W: Write>(
    records: &[BenchmarkRecord],
    mut out: W,
) -> Result<(), WorkloadError> {
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_benchmark<R: BufRead>(input: R) -> Result<Vec<BenchmarkRecord>, WorkloadError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|e| WorkloadError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(records)
}

/// A virtual-clock deployment matching `spec`: one latency-mock expert per
/// domain on a dedicated resource, hash embeddings, synthetic profile
/// datasets and an identity aggregator.
pub fn deployment_for(spec: &BenchmarkSpec) -> DeploymentConfig {
    let mut config = DeploymentConfig::new(ExpertBackendSpec::mock_latency(
        ExpertId::base(),
        spec.latency,
    ));
    config.experts = spec
        .domains()
        .iter()
        .map(|d| ExpertConfig {
            backend: ExpertBackendSpec::mock_latency(*d, spec.latency),
            dataset: Some(DatasetSource::Synthetic {
                domain: d.to_string(),
                count: crate::config::DEFAULT_SYNTHETIC_SENTENCES,
            }),
        })
        .collect();
    config.decomposer = DecomposerConfig::Mock {
        rules: BTreeMap::new(),
        templates: true,
    };
    config.embedding_provider = EmbeddingConfig::Hash { dim: 256, seed: 0 };
    config.aggregator = AggregatorConfig::Identity;
    config
}
