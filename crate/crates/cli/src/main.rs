use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

use commands::CliError;

#[derive(Parser)]
#[command(
    name = "ffdapt",
    version,
    about = "Federated domain-adaptive pre-training simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus per-key overrides, shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML experiment config; every key is optional.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set model.dim=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic JSON-lines corpus.
    #[command(after_help = commands::config_help())]
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        docs: Option<usize>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Split the training portion of a corpus across clients.
    #[command(after_help = commands::config_help())]
    Partition {
        #[command(flatten)]
        config: ConfigArgs,
        /// JSON-lines corpus; defaults to `corpus.path` or the synthetic corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// iid, quantity, sentence-length or vocabulary.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long, short = 'k')]
        clients: Option<usize>,
        #[arg(long)]
        skew: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Partition every document instead of the training split.
        #[arg(long)]
        whole_corpus: bool,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Dump the freeze plan as JSON.
    #[command(after_help = commands::config_help())]
    Schedule {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        layers: Option<usize>,
        /// Comma-separated per-client sample counts, e.g. `75,25`.
        #[arg(long, value_delimiter = ',', conflicts_with = "manifest")]
        samples: Vec<u64>,
        /// Take sample counts from a partition manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        epsilon: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Freeze `N_k + 1` layers per window, as the pseudocode reads.
        #[arg(long)]
        literal_pseudocode: bool,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run one experiment and write its results.
    #[command(after_help = commands::config_help())]
    Pretrain {
        #[command(flatten)]
        config: ConfigArgs,
        /// centralized, fdapt or ffdapt.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Held-out loss of a checkpoint.
    #[command(after_help = commands::config_help())]
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Efficiency improvement of a FFDAPT run over a FDAPT run.
    #[command(after_help = commands::config_help())]
    Compare {
        #[arg(long)]
        fdapt: PathBuf,
        #[arg(long)]
        ffdapt: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            config,
            seed,
            docs,
            out,
        } => commands::synth(&config, seed, docs, &out),
        Command::Partition {
            config,
            corpus,
            kind,
            clients,
            skew,
            seed,
            whole_corpus,
            out,
        } => commands::partition(&commands::PartitionArgs {
            config,
            corpus,
            kind,
            clients,
            skew,
            seed,
            whole_corpus,
            out,
        }),
        Command::Schedule {
            config,
            layers,
            samples,
            manifest,
            rounds,
            epsilon,
            gamma,
            literal_pseudocode,
            out,
        } => commands::schedule(&commands::ScheduleArgs {
            config,
            layers,
            samples,
            manifest,
            rounds,
            epsilon,
            gamma,
            literal_pseudocode,
            out,
        }),
        Command::Pretrain {
            config,
            mode,
            seed,
            out,
        } => commands::pretrain(&config, mode, seed, out),
        Command::Evaluate { config, checkpoint } => commands::evaluate(&config, &checkpoint),
        Command::Compare { fdapt, ffdapt, out } => commands::compare(&fdapt, &ffdapt, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
