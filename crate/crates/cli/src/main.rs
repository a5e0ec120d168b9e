//! `texgraph`: ingest a typed triplet file, train coupled factors, rank
//! candidate links and export embeddings.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "texgraph",
    version,
    about = "Coupled tensor factorization of typed knowledge graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a triplet TSV into a dataset directory (vocabulary, edges, block manifest).
    Ingest(IngestArgs),
    /// Fit factors on an ingested dataset.
    Train(TrainArgs),
    /// Rank candidate drugs for a set of diseases and count reference hits.
    Evaluate(EvaluateArgs),
    /// Write all entity and relation embeddings to two CSV files.
    Export(ExportArgs),
    /// Generate synthetic triplet files.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Triplet file: head, relation, tail separated by tabs.
    pub triplets: PathBuf,
    /// Output dataset directory.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Separator between entity type and local id.
    #[arg(long, default_value = texgraph::ingest::DEFAULT_ENTITY_SEP)]
    pub entity_sep: String,
    /// Split relations seen with several type signatures instead of failing.
    #[arg(long)]
    pub coerce: bool,
    /// Skip malformed lines with a warning instead of failing.
    #[arg(long)]
    pub skip_malformed: bool,
    /// Fixed entity type order, comma separated (default: first appearance).
    #[arg(long, value_delimiter = ',')]
    pub type_order: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    /// Coupled per-type factors over all type-pair blocks.
    Texgraph,
    /// One CPD of the symmetrized global tensor.
    Threeway,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Init {
    /// Pencil-method CPD of the symmetrized global tensor.
    Spectral,
    /// Seeded uniform entries scaled by 1/√F.
    Random,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `ingest`.
    pub data: PathBuf,
    /// Output factor directory.
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Model::Texgraph)]
    pub model: Model,
    /// Embedding rank F.
    #[arg(long, default_value_t = 50)]
    pub rank: usize,
    /// Maximum ALS sweeps.
    #[arg(long, default_value_t = 10)]
    pub sweeps: usize,
    /// Ridge weight λ.
    #[arg(long, default_value = "1e-8")]
    pub ridge: f64,
    /// Stop once a sweep lowers the loss by less than this fraction (0: run all sweeps).
    #[arg(long, default_value_t = 0.0)]
    pub tolerance: f64,
    /// Seed for every random draw (initialization, Lanczos start vector).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initialization of the factors.
    #[arg(long, value_enum, default_value_t = Init::Spectral)]
    pub init: Init,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Factor directory written by `train`.
    pub factors: PathBuf,
    /// Dataset directory the factors were trained on.
    #[arg(short, long)]
    pub data: PathBuf,
    /// Evaluation spec (JSON).
    #[arg(short, long)]
    pub spec: PathBuf,
    /// Output directory for report.tsv and summary.json.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Factor directory written by `train`.
    pub factors: PathBuf,
    /// Dataset directory the factors were trained on.
    #[arg(short, long)]
    pub data: PathBuf,
    /// Output directory for entities.csv and relations.csv.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(subcommand)]
    pub kind: SynthKind,
}

#[derive(Debug, Subcommand)]
pub enum SynthKind {
    /// Triplets with the 13-type, 17-block drug-repurposing schema.
    Mock {
        /// Output triplet file.
        #[arg(short, long)]
        out: PathBuf,
        /// Scale factor applied to every entity type size.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Random edges per relation on top of the coverage edges.
        #[arg(long, default_value_t = 2000)]
        edges_per_relation: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Random typed graph: each listed block slab is an Erdős-Rényi graph.
    Graph {
        /// Output triplet file.
        #[arg(short, long)]
        out: PathBuf,
        /// Entity count per type, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Blocks as `m:n:K`, comma separated (type indices from 0, m <= n).
        #[arg(long, value_delimiter = ',', required = true)]
        blocks: Vec<String>,
        /// Probability of each possible edge.
        #[arg(long, default_value_t = 0.05)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("TEXGRAPH_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow::anyhow!("TEXGRAPH_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

/// 1 for numerical failures, 2 for everything else (input, schema, I/O).
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<texgraph::Error>())
        .any(texgraph::Error::is_numerical);
    if numerical {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Export(a) => commands::export(&a),
        Command::Synth(a) => commands::synth(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
