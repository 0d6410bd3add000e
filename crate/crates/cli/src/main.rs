mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use sgid_core::baselines::PerturbationMethod;
use sgid_core::filters::FilterKind;
use sgid_core::prompting::PromptMode;

#[derive(Debug, Parser)]
#[command(name = "sgid", version, about = "Caption-guided generative image augmentation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. They override the config file.
#[derive(Debug, Args, Clone)]
pub struct GlobalArgs {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset: a manifest JSON file or an image directory to scan.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub no_cache: bool,
    /// Validate inputs and exit without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[arg(long, global = true)]
    pub prompt_mode: Option<PromptMode>,
    #[arg(long, global = true)]
    pub noise_rate: Option<f64>,
    #[arg(long, global = true)]
    pub k_augment: Option<usize>,
    #[arg(long = "backend.caption", global = true, value_name = "ID")]
    pub backend_caption: Option<String>,
    #[arg(long = "backend.score", global = true, value_name = "ID")]
    pub backend_score: Option<String>,
    #[arg(long = "backend.generate", global = true, value_name = "ID")]
    pub backend_generate: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan `<root>/<label>/<image>` into a dataset manifest.
    Scan {
        root: PathBuf,
        /// Manifest path; defaults to `<out-dir>/dataset.json`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a small synthetic three-label dataset and its manifest.
    MakeSynthetic {
        root: PathBuf,
        #[arg(long, default_value_t = 10)]
        per_label: usize,
        #[arg(long, default_value_t = 32)]
        size: u32,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Convert CIFAR binary batches into a directory dataset.
    ImportCifar {
        /// Destination root.
        root: PathBuf,
        #[arg(long = "archive", required = true)]
        archives: Vec<PathBuf>,
        /// Text file with one label name per line, in label-index order.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = false)]
        cifar100: bool,
        #[arg(long)]
        limit_per_label: Option<usize>,
    },
    /// Caption every record and write the caption cache.
    Caption,
    /// Caption, generate and (optionally) filter.
    Augment,
    /// Perturbation baseline producing an augmentation manifest.
    Baseline {
        #[arg(long)]
        method: Option<PerturbationMethod>,
    },
    /// Run one filter over a manifest, writing a filtered copy and a report.
    Filter {
        #[arg(long)]
        kind: FilterKind,
        #[arg(long)]
        manifest: PathBuf,
        /// Filtered manifest path; defaults to `<manifest-dir>/manifest.<kind>.jsonl`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Per-label original vs augmented similarity.
    EvalSimilarity {
        #[arg(long)]
        manifest: PathBuf,
        /// Copies per original to average; defaults to the manifest's k.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Side-by-side image grid, one column per `NAME=MANIFEST`.
    Grid {
        #[arg(long = "column", required = true, value_name = "NAME=MANIFEST")]
        columns: Vec<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train the linear probe on originals plus the given manifests.
    Train {
        #[arg(long = "manifest")]
        manifests: Vec<PathBuf>,
    },
    /// Train several recipes, each `NAME=MANIFEST[,MANIFEST...]` (empty for originals only).
    Compare {
        #[arg(long = "entry", required = true, value_name = "NAME=MANIFESTS")]
        entries: Vec<String>,
    },
}

/// How a subcommand ended.
pub enum Outcome {
    Ok(Value),
    /// Finished, but some records failed.
    Partial(Value),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Failed(String),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let name = command_name(&cli.command);
    let (code, summary) = match commands::run(&cli) {
        Ok(Outcome::Ok(v)) => (0, with_status(name, "ok", v)),
        Ok(Outcome::Partial(v)) => (2, with_status(name, "partial", v)),
        Err(e) => {
            log::error!("{e}");
            let status = match e {
                CliError::Validation(_) => "invalid",
                CliError::Failed(_) => "error",
            };
            (1, with_status(name, status, json!({ "error": e.to_string() })))
        }
    };
    println!("{summary}");
    ExitCode::from(code)
}

fn with_status(command: &str, status: &str, mut v: Value) -> Value {
    if let Value::Object(m) = &mut v {
        m.insert("command".into(), command.into());
        m.insert("status".into(), status.into());
    }
    v
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Scan { .. } => "scan",
        Command::MakeSynthetic { .. } => "make-synthetic",
        Command::ImportCifar { .. } => "import-cifar",
        Command::Caption => "caption",
        Command::Augment => "augment",
        Command::Baseline { .. } => "baseline",
        Command::Filter { .. } => "filter",
        Command::EvalSimilarity { .. } => "eval-similarity",
        Command::Grid { .. } => "grid",
        Command::Train { .. } => "train",
        Command::Compare { .. } => "compare",
    }
}
