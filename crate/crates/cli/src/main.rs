use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod banks;
mod bench;
mod compress;
mod demo;
mod settings;

use settings::FileSettings;

/// Compressed polynomial memory: bank building, signal compression,
/// the reconstruction benchmark and a toy attention block.
#[derive(Debug, Parser)]
#[command(name = "emk", version)]
struct Cli {
    /// TOML file of default parameters (keys as the long flag names)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Precompute and cache block-kernel and reconstruction banks
    BuildBanks(MemoryArgs),
    /// Compress a numeric text file and write its reconstruction
    Compress(CompressArgs),
    /// Reproduce the synthetic-signal reconstruction table
    BenchTable(BenchArgs),
    /// Run the attention block on random inputs and check its invariants
    AttnDemo(DemoArgs),
}

/// Memory shape shared by the subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct MemoryArgs {
    /// Number of Legendre coefficients N
    #[arg(long)]
    pub order: Option<usize>,
    /// Tokens per block L
    #[arg(long)]
    pub block_length: Option<usize>,
    /// Reconstructed rows L_mem
    #[arg(long)]
    pub mem_length: Option<usize>,
    /// Block capacity of the banks
    #[arg(long)]
    pub max_blocks: Option<usize>,
    /// zoh, forward, backward or bilinear
    #[arg(long)]
    pub scheme: Option<String>,
    /// uniform or exponential
    #[arg(long)]
    pub strategy: Option<String>,
    /// Exponential sampling decay α in (0, 1)
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bank cache directory
    #[arg(long, env = "EMK_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompressArgs {
    /// Whitespace or comma separated columns, one row per time step
    pub input: PathBuf,
    #[command(flatten)]
    pub memory: MemoryArgs,
    /// Reconstruction output file (default: <input>.recon.txt)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the reconstruction at every input row
    #[arg(long)]
    pub full_grid: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Base seed; row seeds are seed, seed+1, ...
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of seeds averaged per row
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Samples per signal
    #[arg(long)]
    pub length: Option<usize>,
    /// Report file (printed to stdout when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// csv or json
    #[arg(long)]
    pub format: Option<String>,
    /// Fill the seconds column (makes the report run-dependent)
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    #[command(flatten)]
    pub memory: MemoryArgs,
    /// Attention heads H
    #[arg(long)]
    pub heads: Option<usize>,
    /// Per-head dimension D (even)
    #[arg(long)]
    pub head_dim: Option<usize>,
    /// Blocks to process
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Seed for weights and inputs
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sampling strategy the model runs with
    #[arg(long)]
    pub train_strategy: Option<String>,
    /// Sampling strategy swapped in at evaluation
    #[arg(long)]
    pub eval_strategy: Option<String>,
    /// JSON report file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Bad parameters: reported before any computation, exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// What a subcommand hands back: whether its checks passed and the
/// machine-readable summary printed as the last stdout line.
pub struct Outcome {
    pub ok: bool,
    pub summary: serde_json::Value,
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let file = FileSettings::load(cli.config.as_deref())?;
    match cli.command {
        Command::BuildBanks(args) => banks::run(&args, &file),
        Command::Compress(args) => compress::run(&args, &file),
        Command::BenchTable(args) => bench::run(&args, &file),
        Command::AttnDemo(args) => demo::run(&args, &file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if outcome.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(err) => {
            let usage = err.downcast_ref::<UsageError>().is_some();
            eprintln!("error: {err:#}");
            println!(
                "{}",
                serde_json::json!({ "ok": false, "error": format!("{err:#}") })
            );
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
