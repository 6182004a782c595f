//! `apmae`: runs each pipeline stage as a subcommand over files.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use plot::PlotKind;

#[derive(Parser)]
#[command(name = "apmae", version, about = "Attention-pattern autoencoder pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArg {
    /// Pipeline configuration (`[section]` + `key = value`); presets apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    All,
    Train,
    Heldout,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Java corpus, one file per class.
    GenCorpus {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine fill-in-the-middle tasks from a corpus directory.
    Mine {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the causal language model on the training split.
    TrainLm {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss curve and held-out accuracy as JSON.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Record attention patterns and first-token correctness.
    Harvest {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: Split,
        /// Pattern store.
        #[arg(long)]
        out: PathBuf,
        /// Per-instance records as JSON lines.
        #[arg(long)]
        records: PathBuf,
    },
    /// Train the masked autoencoder on a pattern store.
    TrainMae {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        patterns: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss curve as CSV.
        #[arg(long)]
        loss: Option<PathBuf>,
    },
    /// Masked reconstruction loss of a model on a pattern store.
    EvalMae {
        #[arg(long)]
        mae: PathBuf,
        #[arg(long)]
        patterns: PathBuf,
        /// Loss summary as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reconstruction of one pattern as JSON, for `plot --kind recon-triptych`.
        #[arg(long)]
        recon: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Loss of every model on every dataset.
    CrossEval {
        /// `ID=checkpoint`, repeated.
        #[arg(long = "model", value_parser = parse_pair, required = true)]
        models: Vec<(String, PathBuf)>,
        /// `ID=pattern store`, repeated; IDs match model IDs.
        #[arg(long = "data", value_parser = parse_pair, required = true)]
        data: Vec<(String, PathBuf)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encoder embeddings of every stored pattern.
    Embed {
        #[arg(long)]
        mae: PathBuf,
        #[arg(long)]
        patterns: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster embeddings per head.
    Cluster {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        embeddings: PathBuf,
        /// Cluster model container.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        assignments: PathBuf,
    },
    /// Clusters per head and their histogram.
    ClusterStats {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
    /// Cross-validated correctness classifier over cluster labels.
    Classify {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        assignments: PathBuf,
        #[arg(long)]
        records: PathBuf,
        /// Feature table written before training.
        #[arg(long)]
        table: PathBuf,
        /// Fold models and accuracies as JSON.
        #[arg(long)]
        out: PathBuf,
        /// Mean accuracy and interval as CSV, for `plot --kind accuracy`.
        #[arg(long)]
        accuracy: Option<PathBuf>,
    },
    /// Shapley attribution of the fold models on their held-out rows.
    Shap {
        #[arg(long)]
        cv: PathBuf,
        #[arg(long)]
        table: PathBuf,
        /// Mean contribution per head and label as CSV.
        #[arg(long)]
        out: PathBuf,
        /// Per-head importance as CSV.
        #[arg(long)]
        importance: PathBuf,
        /// Full summary as JSON, consumed by `intervene`.
        #[arg(long)]
        summary: PathBuf,
    },
    /// Zero ranked heads and count flipped predictions.
    Intervene {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        summary: PathBuf,
        #[arg(long, value_enum, default_value = "heldout")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Net change per mode and count across intervention reports.
    Summarize {
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-task curves as CSV.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Render a figure as SVG plus the CSV it was drawn from.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long = "in")]
        input: PathBuf,
        /// Output path stem; `.svg` and `.csv` are appended.
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_pair(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), PathBuf::from(v))),
        _ => Err(format!("expected ID=PATH, got {s:?}")),
    }
}

fn exit_code(e: &commands::CliError) -> u8 {
    use apmae::Error;
    match e {
        commands::CliError::Usage(_) => 2,
        commands::CliError::Core(Error::Config(_)) => 2,
        commands::CliError::Core(Error::Numerical(_)) => 4,
        commands::CliError::Core(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = commands::init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(exit_code(&e));
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
