use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use shardann::{DistanceFunction, SpillMode};

mod commands;
mod failure;

use failure::Failure;

/// Partitioned HNSW: learn segmenters, build and query sharded indices,
/// compute exact ground truth and measure recall.
#[derive(Debug, Parser)]
#[command(name = "shardann", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn a segmenter from a sample of the input vectors.
    LearnSegmenter(LearnArgs),
    /// Build a partitioned index directory.
    Build(BuildArgs),
    /// Run a query file against an index.
    Query(QueryArgs),
    /// Brute-force ground truth.
    Exact(ExactArgs),
    /// Recall of a result file against ground truth.
    Evaluate(EvaluateArgs),
    /// Learn, build, query and evaluate in one run.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    /// Random segment assignment.
    Rs,
    /// Random hyperplanes.
    Rh,
    /// Approximate principal directions.
    Apd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DistanceArg {
    Euclidean,
    Cosine,
}

impl From<DistanceArg> for DistanceFunction {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::Euclidean => DistanceFunction::Euclidean,
            DistanceArg::Cosine => DistanceFunction::Cosine,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SpillArg {
    Virtual,
    Physical,
}

impl From<SpillArg> for SpillMode {
    fn from(s: SpillArg) -> Self {
        match s {
            SpillArg::Virtual => SpillMode::Virtual,
            SpillArg::Physical => SpillMode::Physical,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SegmenterOpts {
    #[arg(long, value_enum)]
    pub strategy: Strategy,
    /// Segment count for `rs`; defaults to 2^levels.
    #[arg(long)]
    pub segments: Option<usize>,
    /// Tree depth for `rh` and `apd`.
    #[arg(long, default_value_t = 3)]
    pub levels: u32,
    #[arg(long, default_value_t = 0.15)]
    pub alpha: f64,
    /// Rows sampled (without replacement) for learning.
    #[arg(long, default_value_t = 250_000)]
    pub sample_size: usize,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    /// Training vectors (fvecs); optional for `rs`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub segmenter: SegmenterOpts,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct HnswOpts {
    #[arg(long, default_value_t = 16)]
    pub m: usize,
    /// Layer-0 degree; defaults to 2 * m.
    #[arg(long)]
    pub m0: Option<usize>,
    #[arg(long, default_value_t = 200)]
    pub ef_construction: usize,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Segmenter file; without one every shard holds a single segment.
    #[arg(long)]
    pub segmenter: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub shards: usize,
    #[command(flatten)]
    pub hnsw: HnswOpts,
    /// efSearch stored with the index as the query default.
    #[arg(long, default_value_t = 100)]
    pub ef_search: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = DistanceArg::Euclidean)]
    pub distance: DistanceArg,
    #[arg(long, value_enum, default_value_t = SpillArg::Virtual)]
    pub spill: SpillArg,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct QueryOpts {
    #[arg(long, default_value_t = 10)]
    pub topk: usize,
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
    #[arg(long, value_enum, default_value_t = Toggle::Off)]
    pub per_shard_topk: Toggle,
    /// Use probit(1 - p/2) instead of probit((1 + p)/2).
    #[arg(long)]
    pub f_literal: bool,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Index directory.
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[command(flatten)]
    pub query: QueryOpts,
    /// Defaults to the value stored with the index.
    #[arg(long)]
    pub ef_search: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Result ids (ivecs); short rows are padded with -1.
    #[arg(long)]
    pub out: PathBuf,
    /// Result distances (fvecs); short rows are padded with +inf.
    #[arg(long)]
    pub out_distances: Option<PathBuf>,
    /// Timing report (JSON); also printed to stdout.
    #[arg(long)]
    pub timing_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExactArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = DistanceArg::Euclidean)]
    pub distance: DistanceArg,
    /// Contiguous chunks scanned independently; defaults to --workers.
    #[arg(long)]
    pub partitions: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub out_distances: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Result ids (ivecs).
    #[arg(long)]
    pub results: PathBuf,
    /// Ground-truth ids (ivecs).
    #[arg(long)]
    pub truth: PathBuf,
    /// Recall cut-offs. Without this flag, the cut-offs among
    /// 1,5,10,15,50,100 that fit the result width are used.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Base vectors (fvecs). Without --input and --queries a synthetic
    /// clustered dataset is generated.
    #[arg(long, requires = "queries")]
    pub input: Option<PathBuf>,
    #[arg(long, requires = "input")]
    pub queries: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pub synthetic_size: usize,
    #[arg(long, default_value_t = 1_000)]
    pub synthetic_queries: usize,
    #[arg(long, default_value_t = 32)]
    pub synthetic_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub synthetic_clusters: usize,
    #[command(flatten)]
    pub segmenter: SegmenterOpts,
    #[arg(long, default_value_t = 1)]
    pub shards: usize,
    #[command(flatten)]
    pub hnsw: HnswOpts,
    #[arg(long, default_value_t = 200)]
    pub ef_search: usize,
    #[command(flatten)]
    pub query: QueryOpts,
    #[arg(long, value_enum, default_value_t = DistanceArg::Euclidean)]
    pub distance: DistanceArg,
    #[arg(long, value_enum, default_value_t = SpillArg::Virtual)]
    pub spill: SpillArg,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::LearnSegmenter(a) => commands::learn_segmenter(&a),
        Command::Build(a) => commands::build(&a),
        Command::Query(a) => commands::query(&a),
        Command::Exact(a) => commands::exact(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Bench(a) => commands::bench(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
