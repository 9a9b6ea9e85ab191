//! Benchmark runner: parallel versus sequential makespan per query, plus
//! routing accuracy against the gold domain labels.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use expertflow_core::backend::MockDecomposer;

use crate::config::DeploymentConfig;
use crate::error::PipelineError;
use crate::pipeline::{Components, Pipeline};
use crate::profiles;
use crate::workload::BenchmarkRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub index: usize,
    pub parallel_ms: f64,
    pub sequential_ms: f64,
    pub speedup: f64,
    /// Routed expert per sub-query.
    pub routed: Vec<String>,
    pub gold: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryFailure {
    pub index: usize,
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub queries: usize,
    /// Geometric mean of sequential / parallel makespan over successful
    /// queries.
    pub speedup_geomean: f64,
    pub per_query: Vec<QueryReport>,
    /// Sub-queries routed to each expert (including `base`).
    pub routing_distribution: BTreeMap<String, usize>,
    /// Fraction of sub-queries whose routed expert differs from the gold
    /// label.
    pub routing_error_rate: f64,
    pub failures: Vec<QueryFailure>,
}

/// Geometric mean; `None` for an empty input or any non-positive value.
pub fn geometric_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty()
        || values
            .iter()
            .any(|v| v.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater))
    {
        return None;
    }
    Some((values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp())
}

/// Builds a pipeline for `config` whose decomposer knows the gold
/// decomposition of every record, so the run measures scheduling and routing
/// rather than decomposition quality.
pub fn gold_pipeline(
    config: DeploymentConfig,
    records: &[BenchmarkRecord],
    base_dir: Option<&Path>,
) -> Result<Pipeline, PipelineError> {
    let mut components = Components::from_config(&config)?;
    let mut decomposer = MockDecomposer::new();
    for record in records {
        decomposer.insert(&record.query, record.gold_decomposition());
    }
    components.decomposer = Arc::new(decomposer);
    let profiles = profiles::load_or_build(&config, &components.embedder, base_dir)?;
    Ok(Pipeline::new(config, components, profiles))
}

pub fn run_benchmark(pipeline: &Pipeline, records: &[BenchmarkRecord]) -> BenchmarkReport {
    let mut per_query = Vec::new();
    let mut failures = Vec::new();
    let mut distribution = BTreeMap::new();
    let (mut routed_total, mut misrouted) = (0usize, 0usize);

    for (index, record) in records.iter().enumerate() {
        match run_one(pipeline, index, record) {
            Ok(report) => {
                for (routed, gold) in report.routed.iter().zip(&report.gold) {
                    *distribution.entry(routed.clone()).or_insert(0) += 1;
                    routed_total += 1;
                    misrouted += usize::from(routed != gold);
                }
                per_query.push(report);
            }
            Err(e) => failures.push(QueryFailure {
                index,
                code: e.code().to_string(),
                message: e.to_string(),
            }),
        }
    }

    let speedups: Vec<f64> = per_query.iter().map(|q| q.speedup).collect();
    BenchmarkReport {
        queries: records.len(),
        speedup_geomean: geometric_mean(&speedups).unwrap_or(f64::NAN),
        per_query,
        routing_distribution: distribution,
        routing_error_rate: if routed_total == 0 {
            0.0
        } else {
            misrouted as f64 / routed_total as f64
        },
        failures,
    }
}

fn run_one(
    pipeline: &Pipeline,
    index: usize,
    record: &BenchmarkRecord,
) -> Result<QueryReport, PipelineError> {
    let plan = pipeline.plan(&record.query)?;
    let routed = plan
        .graph
        .nodes()
        .iter()
        .map(|n| {
            n.expert
                .as_ref()
                .map(ToString::to_string)
                .unwrap_or_default()
        })
        .collect();
    let parallel = pipeline.execute(plan.graph.clone())?;
    let sequential = pipeline.execute_sequential(plan.graph)?;
    if parallel.leaf_responses != sequential.leaf_responses {
        log::warn!("query {index}: parallel and sequential leaf responses differ");
    }
    let parallel_ms = parallel.makespan().as_secs_f64() * 1e3;
    let sequential_ms = sequential.makespan().as_secs_f64() * 1e3;
    Ok(QueryReport {
        index,
        parallel_ms,
        sequential_ms,
        speedup: sequential_ms / parallel_ms,
        routed,
        gold: record.gold_domains.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{
        deployment_for, generate_benchmark, BenchmarkShape, BenchmarkSpec, Topology,
    };
    use expertflow_core::backend::LatencyModel;

    #[test]
    fn geomean() {
        assert!((geometric_mean(&[1.0, 4.0]).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(geometric_mean(&[]), None);
        assert_eq!(geometric_mean(&[1.0, 0.0]), None);
    }

    #[test]
    fn diamond_benchmark_reports_four_thirds() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = BenchmarkSpec::new(
            BenchmarkShape::DependentAll,
            3,
            20,
            LatencyModel::Constant { ms: 100.0 },
            3,
        );
        spec.topology = Topology::Diamond;
        let records = generate_benchmark(&spec).unwrap();
        let mut config = deployment_for(&spec);
        config.profile_store_path = dir.path().join("p.json");
        let pipeline = gold_pipeline(config, &records, None).unwrap();
        let report = run_benchmark(&pipeline, &records);
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        assert_eq!(report.routing_error_rate, 0.0);
        assert!(
            (report.speedup_geomean - 4.0 / 3.0).abs() < 1e-9,
            "{}",
            report.speedup_geomean
        );
        assert_eq!(report.routing_distribution.values().sum::<usize>(), 80);
    }
}
