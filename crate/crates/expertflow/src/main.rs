use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use expertflow::bench::{gold_pipeline, run_benchmark};
use expertflow::documents::{write_trace_jsonl, GraphDoc};
use expertflow::pipeline::{Components, Pipeline};
use expertflow::service::{self, QueryResponse};
use expertflow::workload::{
    deployment_for, generate_benchmark, read_benchmark, write_benchmark, BenchmarkShape,
    BenchmarkSpec, Topology, DEFAULT_UNRELATED_FRACTION,
};
use expertflow::{profiles, DeploymentConfig};
use expertflow_core::backend::LatencyModel;
use expertflow_core::graph::graph_from_decomposition;

#[derive(Parser)]
#[command(
    name = "expertflow",
    version,
    about = "Decompose queries, route sub-queries to expert models, run them as a DAG"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP query service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Build expert profiles from the configured datasets and write the store.
    BuildProfiles {
        #[arg(long)]
        config: PathBuf,
    },
    /// Answer one query and print the result as JSON.
    Query {
        #[arg(long)]
        config: PathBuf,
        /// Write the execution trace as line-delimited JSON.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        query: String,
    },
    /// Write a seeded synthetic benchmark.
    GenerateBenchmark(GenerateArgs),
    /// Run a benchmark file and print the report.
    RunBenchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        benchmark: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse a token-tagged decomposition (argument, or stdin when omitted)
    /// and print its graph.
    Parse {
        #[arg(long, default_value = "")]
        query: String,
        raw: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    IndependentP,
    DependentAll,
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    Mixed,
    Chain,
    Diamond,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    shape: ShapeArg,
    #[arg(long, default_value_t = 3)]
    experts: usize,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    /// Constant per-call latency in milliseconds.
    #[arg(long, default_value_t = 100.0, conflicts_with_all = ["latency_min_ms", "latency_max_ms"])]
    latency_ms: f64,
    /// Uniform latency lower bound; requires --latency-max-ms.
    #[arg(long, requires = "latency_max_ms")]
    latency_min_ms: Option<f64>,
    #[arg(long, requires = "latency_min_ms")]
    latency_max_ms: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_UNRELATED_FRACTION)]
    unrelated_fraction: f64,
    #[arg(long, value_enum, default_value = "mixed")]
    topology: TopologyArg,
    #[arg(long)]
    out: PathBuf,
    /// Also write a matching mock-latency, virtual-clock deployment config.
    #[arg(long)]
    config_out: Option<PathBuf>,
}

impl GenerateArgs {
    fn spec(&self) -> BenchmarkSpec {
        let latency = match (self.latency_min_ms, self.latency_max_ms) {
            (Some(min_ms), Some(max_ms)) => LatencyModel::Uniform { min_ms, max_ms },
            _ => LatencyModel::Constant {
                ms: self.latency_ms,
            },
        };
        let shape = match self.shape {
            ShapeArg::IndependentP => BenchmarkShape::IndependentP,
            ShapeArg::DependentAll => BenchmarkShape::DependentAll,
        };
        let mut spec = BenchmarkSpec::new(shape, self.experts, self.queries, latency, self.seed);
        spec.unrelated_fraction = self.unrelated_fraction;
        spec.topology = match self.topology {
            TopologyArg::Mixed => Topology::Mixed,
            TopologyArg::Chain => Topology::Chain,
            TopologyArg::Diamond => Topology::Diamond,
        };
        spec
    }
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match io::stdout().lock().write_all(text.as_bytes()) {
        // A closed pipe (`| head`) is not an error worth reporting.
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn load_config(path: &Path) -> anyhow::Result<DeploymentConfig> {
    DeploymentConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Serve { config, addr } => {
            let cfg = load_config(&config)?;
            let base_dir = config.parent().map(Path::to_path_buf);
            tokio::runtime::Runtime::new()?.block_on(service::serve(cfg, base_dir, addr))
        }
        Command::BuildProfiles { config } => {
            let cfg = load_config(&config)?;
            let components = Components::from_config(&cfg)?;
            let built = profiles::build_all(&cfg, &components.embedder, config.parent())?;
            profiles::save(&cfg.profile_store_path, &built)?;
            log::info!(
                "wrote {} profiles to {}",
                built.len(),
                cfg.profile_store_path.display()
            );
            Ok(())
        }
        Command::Query {
            config,
            trace_out,
            query,
        } => {
            let pipeline = Pipeline::load(&config)?;
            let outcome = pipeline.run(&query)?;
            if let Some(path) = trace_out {
                let file =
                    File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_trace_jsonl(&outcome.result.trace, BufWriter::new(file))?;
            }
            print_json(&QueryResponse::from(&outcome))
        }
        Command::GenerateBenchmark(args) => {
            let spec = args.spec();
            let records = generate_benchmark(&spec)?;
            let file = File::create(&args.out)
                .with_context(|| format!("creating {}", args.out.display()))?;
            write_benchmark(&records, BufWriter::new(file))?;
            if let Some(path) = &args.config_out {
                fs::write(path, deployment_for(&spec).to_toml()?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            log::info!("wrote {} queries to {}", records.len(), args.out.display());
            Ok(())
        }
        Command::RunBenchmark {
            config,
            benchmark,
            out,
        } => {
            let cfg = load_config(&config)?;
            let file = File::open(&benchmark)
                .with_context(|| format!("opening {}", benchmark.display()))?;
            let records = read_benchmark(BufReader::new(file))?;
            if records.is_empty() {
                bail!("{} holds no queries", benchmark.display());
            }
            let pipeline = gold_pipeline(cfg, &records, config.parent())?;
            let report = run_benchmark(&pipeline, &records);
            if !report.failures.is_empty() {
                log::warn!(
                    "{} of {} queries failed",
                    report.failures.len(),
                    report.queries
                );
            }
            match out {
                Some(path) => {
                    let mut text = serde_json::to_string_pretty(&report)?;
                    text.push('\n');
                    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
                }
                None => print_json(&report),
            }
        }
        Command::Parse { query, raw } => {
            let raw = match raw {
                Some(r) => r,
                None => {
                    let mut s = String::new();
                    io::stdin().read_to_string(&mut s)?;
                    s
                }
            };
            let graph = graph_from_decomposition(&query, &raw)?;
            print_json(&GraphDoc::from(&graph))
        }
    }
}
