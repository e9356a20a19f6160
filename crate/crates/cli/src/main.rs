//! `hilrag`: batch entry points for ingestion, triplet mining, adapter
//! training, indexing, evaluation, reporting and serving.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hilrag_core::train::LossKind;

use crate::config::CliConfig;

#[derive(Debug, Parser)]
#[command(
    name = "hilrag",
    version,
    about = "Retrieval fine-tuning and grounded answering toolkit"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; they win over the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML config file; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub triplets: Option<PathBuf>,
    #[arg(long, global = true)]
    pub adapter: Option<PathBuf>,
    #[arg(long, global = true)]
    pub index: Option<PathBuf>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub loss: Option<LossKind>,
    #[arg(long, global = true)]
    pub margin: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<u32>,
    /// Train on (anchor, positive) pairs only.
    #[arg(long, global = true)]
    pub no_negatives: bool,
    /// Primary output path (file or directory, depending on the subcommand).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate and checkpoint a directory of raw documents into a corpus file.
    Ingest {
        #[arg(long)]
        source: Option<PathBuf>,
        /// Discard any existing checkpoint and start over.
        #[arg(long)]
        reset: bool,
    },
    /// Mine positive pairs and hard negatives into a triplet file.
    Mine {
        /// Additional template-synthesized triplets.
        #[arg(long)]
        synthetic: Option<usize>,
    },
    /// Fit an adapter on a triplet file and write it.
    Train {
        /// Held-out triplets scored after every epoch.
        #[arg(long)]
        benchmark: Option<PathBuf>,
    },
    /// Embed the corpus and write an index snapshot.
    Index,
    /// Score triplets, retrieval queries or answer attribution and write reports.
    Eval {
        /// JSONL of {"query", "true_doc_id"} for top-1 retrieval accuracy.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Also run the configured chat client and score SOURCE attribution.
        #[arg(long)]
        attribution: bool,
        /// Row label used by `report`.
        #[arg(long)]
        label: Option<String>,
    },
    /// Serve the HTTP and WebSocket API.
    Serve {
        /// Listen address; HILRAG_BIND overrides the config, this flag overrides both.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Combine eval JSONL rows into a comparison table against the first row.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

/// Failures split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Domain(e.into())
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("HILRAG_LOG")
                .unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nUsage: hilrag [OPTIONS] <ingest|mine|train|index|eval|serve|report>");
            ExitCode::from(2)
        }
        Err(CliError::Domain(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = resolve_config(&cli.overrides)?;
    println!("config-digest {}", config.digest());
    let o = &cli.overrides;
    match cli.command {
        Command::Ingest { source, reset } => {
            commands::ingest(&config, source, reset, o.out.clone())
        }
        Command::Mine { synthetic } => commands::mine(&config, synthetic, o.out.clone()),
        Command::Train { benchmark } => commands::train(&config, benchmark, o.out.clone()),
        Command::Index => commands::index(&config, o.out.clone()),
        Command::Eval {
            queries,
            attribution,
            label,
        } => commands::eval(&config, queries, attribution, label, o.out.clone()),
        Command::Serve { bind } => commands::serve(&config, bind),
        Command::Report { inputs } => commands::report(&config, &inputs, o.out.clone()),
    }
}

fn absolute(p: &PathBuf) -> PathBuf {
    if p.is_absolute() {
        p.clone()
    } else {
        std::env::current_dir()
            .map(|d| d.join(p))
            .unwrap_or_else(|_| p.clone())
    }
}

fn resolve_config(o: &Overrides) -> Result<CliConfig, CliError> {
    let mut config = match &o.config {
        Some(path) => CliConfig::load(path).map_err(|e| CliError::Usage(format!("{e:#}")))?,
        None => CliConfig::default(),
    };
    if let Some(seed) = o.seed {
        config.seed = seed;
    }
    let paths = &mut config.paths;
    for (flag, slot) in [
        (&o.corpus, &mut paths.corpus),
        (&o.triplets, &mut paths.triplets),
        (&o.adapter, &mut paths.adapter),
        (&o.index, &mut paths.index),
    ] {
        if let Some(p) = flag {
            *slot = Some(absolute(p));
        }
    }
    if let Some(k) = o.k {
        config.retrieval.k = k;
    }
    if let Some(loss) = o.loss {
        config.training.loss = loss;
    }
    if let Some(margin) = o.margin {
        config.training.margin = margin;
    }
    if let Some(epochs) = o.epochs {
        config.training.epochs = epochs;
    }
    if o.no_negatives {
        config.training.use_negatives = false;
    }
    config.apply_seed();
    Ok(config)
}
