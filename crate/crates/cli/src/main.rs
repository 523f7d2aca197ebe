mod commands;
mod exit;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zcnas::archspace::Metric;
use zcnas::trainer::SamplerKind;

#[derive(Debug, Parser)]
#[command(name = "zcnas", version, about = "Zero-cost preferred-space search for vision transformers")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "ZCNAS_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    /// Resource metric for grids and frontiers.
    #[arg(long, global = true)]
    pub metric: Option<Metric>,
    /// Worker threads for scoring and evaluation.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cardinality, isomer groups and resource extrema of a space.
    Enumerate {
        /// Space file or preset (tiny, small, base, toy); defaults to the config's.
        #[arg(long)]
        space: Option<String>,
    },
    /// Scores the supernet once and writes the preferred space.
    Select,
    /// One-shot training of the supernet.
    Train {
        #[arg(long)]
        preferred: Option<PathBuf>,
        /// Start from these weights instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        sampler: Option<SamplerKind>,
    },
    /// Held-out accuracy of architectures with inherited weights.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        preferred: Option<PathBuf>,
        /// Architecture ids to evaluate instead of the preferred members.
        #[arg(long = "arch")]
        archs: Vec<String>,
        /// Also evaluate up to this many isomers of each architecture.
        #[arg(long, default_value_t = 0)]
        isomers: usize,
    },
    /// Non-dominated (resource, accuracy) points of an eval CSV.
    Pareto {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Rank correlation between a proxy and measured accuracy.
    Kendall(ProxyArgs),
    /// Mean best rank of a proxy within isomer groups.
    Mbr(ProxyArgs),
}

#[derive(Debug, Args)]
pub struct ProxyArgs {
    /// Eval CSV with measured accuracies.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// CSV of `arch_id,score`; without it scores come from the saliency checkpoint.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub saliency: Option<PathBuf>,
    #[arg(long, default_value = "snip-norm")]
    pub proxy: Proxy,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Proxy {
    Snip,
    SnipNorm,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(exit::OTHER);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code(&e))
        }
    }
}
