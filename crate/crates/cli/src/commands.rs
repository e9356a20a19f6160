use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use hilrag_core::corpus::{load_corpus, load_triplets, save_triplets, Ingestor};
use hilrag_core::digest::{config_digest, sha256_hex};
use hilrag_core::eval::{
    attribution_accuracy, compare_reports, top1_accuracy, triplet_accuracy, write_report,
    ComparisonRow, EvalQuery,
};
use hilrag_core::index::SnapshotWarning;
use hilrag_core::mine::{
    mine_hard_negatives, mine_positive_pairs, pairs_to_triplets, synthesize_triplets,
    TemplateSynthesizer,
};
use hilrag_core::rag::{ChatClient, EchoClient, HttpChatClient, RagPipeline, ScriptedClient};
use hilrag_core::train::train_adapter;
use hilrag_core::{AdapterModel, Encoder, KnowledgeDocument, SharedIndex, VectorIndex};
use hilrag_service::{AppState, ServiceConfig};
use serde_json::json;

use crate::config::{CliConfig, ClientConfig};
use crate::CliError;

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    value.as_deref().ok_or_else(|| {
        CliError::Usage(format!(
            "no {what} path: pass --{what} or set paths.{what} in the config"
        ))
    })
}

fn corpus(config: &CliConfig) -> Result<Vec<KnowledgeDocument>, CliError> {
    let path = required(&config.paths.corpus, "corpus")?;
    let (docs, report) =
        load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))?;
    for r in &report.rejected {
        eprintln!("rejected {}: {}", r.locator, r.reason);
    }
    Ok(docs)
}

/// Base embedder from the descriptor, plus the adapter when one is configured.
fn encoder(config: &CliConfig, with_adapter: bool) -> Result<Encoder, CliError> {
    let encoder = Encoder::new(config.embedder.build()?);
    match (&config.paths.adapter, with_adapter) {
        (Some(path), true) => {
            let model = AdapterModel::load(path)
                .with_context(|| format!("loading adapter {}", path.display()))?;
            Ok(encoder.with_adapter(model)?)
        }
        _ => Ok(encoder),
    }
}

fn out_path(
    out: Option<PathBuf>,
    configured: &Option<PathBuf>,
    what: &str,
) -> Result<PathBuf, CliError> {
    match out {
        Some(p) => Ok(p),
        None => Ok(required(configured, what)?.to_path_buf()),
    }
}

fn reports_dir(config: &CliConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| config.paths.reports.clone())
        .unwrap_or_else(|| PathBuf::from("reports"))
}

pub fn ingest(
    config: &CliConfig,
    source: Option<PathBuf>,
    reset: bool,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let source = match source {
        Some(s) => s,
        None => required(&config.paths.source, "source")?.to_path_buf(),
    };
    let output = out_path(out, &config.paths.corpus, "corpus")?;
    let mut checkpoint = output.clone().into_os_string();
    checkpoint.push(".checkpoint.json");
    let report = Ingestor::new(&source, PathBuf::from(checkpoint), &output)
        .reset(reset)
        .run()?;
    for r in &report.rejected {
        eprintln!("rejected {}: {}", r.locator, r.reason);
    }
    println!(
        "ingested {} records: {} accepted, {} rejected -> {}",
        report.total,
        report.accepted,
        report.rejected.len(),
        output.display()
    );
    Ok(())
}

pub fn mine(
    config: &CliConfig,
    synthetic: Option<usize>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let docs = corpus(config)?;
    let output = out_path(out, &config.paths.triplets, "triplets")?;
    let reference = encoder(config, true)?;
    let pairs = mine_positive_pairs(&docs, &config.mining.mining);
    let mut triplets = if config.training.use_negatives {
        let outcome = mine_hard_negatives(&pairs, &docs, &reference, &config.mining.mining)?;
        for skipped in &outcome.band_empty {
            eprintln!(
                "band empty for {} ({} candidates available)",
                skipped.anchor_id, skipped.available
            );
        }
        outcome.triplets
    } else {
        pairs_to_triplets(&pairs, &docs)
    };
    let mined = triplets.len();
    let n_synthetic = synthetic.unwrap_or(config.mining.synthetic);
    if n_synthetic > 0 {
        triplets.extend(synthesize_triplets(
            &docs,
            &TemplateSynthesizer,
            n_synthetic,
            config.seed,
        )?);
    }
    save_triplets(&output, &triplets)?;
    println!(
        "{} positive pairs, {} mined and {} synthetic triplets -> {}",
        pairs.len(),
        mined,
        triplets.len() - mined,
        output.display()
    );
    Ok(())
}

pub fn train(
    config: &CliConfig,
    benchmark: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let triplets_path = required(&config.paths.triplets, "triplets")?;
    let triplets = load_triplets(triplets_path)?;
    let output = out_path(out, &config.paths.adapter, "adapter")?;
    let bench = match benchmark.or_else(|| config.paths.benchmark.clone()) {
        Some(p) => Some(load_triplets(&p)?),
        None => None,
    };
    let base = config.embedder.build()?;
    let outcome = train_adapter(base, &triplets, &config.training, bench.as_deref())?;
    outcome.model.save(&output)?;
    let accuracy = outcome
        .history
        .epoch_accuracy
        .as_deref()
        .unwrap_or_default();
    for (epoch, loss) in outcome.history.epoch_loss.iter().enumerate() {
        match accuracy.get(epoch) {
            Some(acc) => println!("epoch {:>3} loss {loss:.6} benchmark {acc:.4}", epoch + 1),
            None => println!("epoch {:>3} loss {loss:.6}", epoch + 1),
        }
    }
    println!(
        "adapter {} ({} triplets, training digest {}) -> {}",
        Encoder::new(config.embedder.build()?)
            .with_adapter(outcome.model)?
            .adapter_digest(),
        triplets.len(),
        config.training.digest(),
        output.display()
    );
    Ok(())
}

pub fn index(config: &CliConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    let docs = corpus(config)?;
    let output = out_path(out, &config.paths.index, "index")?;
    let enc = encoder(config, true)?;
    let index = VectorIndex::build(&docs, &enc)?;
    index.save_snapshot(&output)?;
    println!(
        "indexed {} documents (adapter {}) -> {}",
        index.len(),
        index.adapter_digest(),
        output.display()
    );
    Ok(())
}

/// Loads the configured snapshot when present, otherwise builds from the corpus.
fn load_or_build_index(
    config: &CliConfig,
    docs: &[KnowledgeDocument],
    enc: &Encoder,
) -> Result<VectorIndex, CliError> {
    match &config.paths.index {
        Some(path) if path.exists() => {
            let loaded = VectorIndex::load_snapshot(path, Some(&enc.adapter_digest()))?;
            if let Some(SnapshotWarning::DigestMismatch {
                snapshot,
                configured,
            }) = loaded.warning
            {
                eprintln!("warning: snapshot built under adapter {snapshot}, configured adapter is {configured}");
            }
            Ok(loaded.index)
        }
        _ => Ok(VectorIndex::build(docs, enc)?),
    }
}

fn load_queries(path: &Path) -> Result<Vec<EvalQuery>, CliError> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading queries {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line)
                .with_context(|| format!("{}:{}: malformed query", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

fn build_client(config: &CliConfig) -> Result<Arc<dyn ChatClient>, CliError> {
    Ok(match &config.serve.client {
        ClientConfig::Echo { with_source } => Arc::new(EchoClient {
            with_source: *with_source,
        }),
        ClientConfig::Scripted { script } => Arc::new(ScriptedClient::from_path(script)?),
        ClientConfig::Http(http) => Arc::new(HttpChatClient::new(http.clone())?),
    })
}

fn pipeline(config: &CliConfig) -> Result<RagPipeline, CliError> {
    let docs = corpus(config)?;
    let enc = encoder(config, true)?;
    let index = load_or_build_index(config, &docs, &enc)?;
    Ok(RagPipeline::new(
        SharedIndex::new(index),
        enc,
        docs,
        config.retrieval.clone(),
    )?)
}

fn row(label: &str, metric: &str, accuracy: f64, report: impl serde::Serialize) -> String {
    let mut line = serde_json::to_string(&json!({
        "label": label,
        "params_m": null,
        "accuracy_pct": 100.0 * accuracy,
        "metric": metric,
        "report": report,
    }))
    .expect("report serializes");
    line.push('\n');
    line
}

pub fn eval(
    config: &CliConfig,
    queries: Option<PathBuf>,
    attribution: bool,
    label: Option<String>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    if config.paths.triplets.is_none() && queries.is_none() && config.paths.queries.is_none() {
        return Err(CliError::Usage(
            "nothing to evaluate: pass --triplets or --queries".into(),
        ));
    }
    let label = label.unwrap_or_else(|| {
        if config.paths.adapter.is_some() {
            "adapter"
        } else {
            "untrained"
        }
        .into()
    });
    let enc = encoder(config, true)?;
    let mut table = String::new();
    let mut jsonl = String::new();

    if let Some(path) = &config.paths.triplets {
        let triplets = load_triplets(path)?;
        let report = triplet_accuracy(&enc, &triplets)?;
        table.push_str(&format!("{label} triplet accuracy: {report}\n"));
        jsonl.push_str(&row(&label, "triplet", report.accuracy, &report));
    }
    if let Some(path) = queries.as_ref().or(config.paths.queries.as_ref()) {
        let queries = load_queries(path)?;
        let pipeline = pipeline(config)?;
        let report = top1_accuracy(&pipeline.index().snapshot(), &enc, &queries)?;
        table.push_str(&format!("{label} retrieval: {report}\n"));
        jsonl.push_str(&row(&label, "top1", report.accuracy, &report));
        if attribution {
            let client = build_client(config)?;
            let report = attribution_accuracy(&pipeline, client.as_ref(), &queries)?;
            table.push_str(&format!("{label} attribution: {report}\n"));
            jsonl.push_str(&row(&label, "attribution", report.accuracy, &report));
        }
    } else if attribution {
        return Err(CliError::Usage("--attribution needs --queries".into()));
    }

    print!("{table}");
    let digest = config_digest(&(config.digest(), &label, &jsonl));
    let (txt, json) = write_report(&reports_dir(config, out), "eval", &digest, &table, &jsonl)?;
    println!("wrote {} and {}", txt.display(), json.display());
    Ok(())
}

pub fn report(
    config: &CliConfig,
    inputs: &[PathBuf],
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut rows = Vec::new();
    let mut material = String::new();
    for path in inputs {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: ComparisonRow = serde_json::from_str(line)
                .with_context(|| format!("{}:{}: not a comparison row", path.display(), i + 1))?;
            rows.push(row);
        }
        material.push_str(&text);
    }
    if rows.is_empty() {
        return Err(anyhow::anyhow!("no rows in the given inputs").into());
    }
    let comparison = compare_reports(&rows);
    let table = comparison.to_table();
    print!("{table}");
    let digest = sha256_hex(material.as_bytes())[..16].to_string();
    let (txt, json) = write_report(
        &reports_dir(config, out),
        "report",
        &digest,
        &table,
        &comparison.to_jsonl(),
    )?;
    println!("wrote {} and {}", txt.display(), json.display());
    Ok(())
}

pub fn serve(config: &CliConfig, bind: Option<String>) -> Result<(), CliError> {
    let bind = bind
        .or_else(|| std::env::var("HILRAG_BIND").ok())
        .unwrap_or_else(|| config.serve.bind.clone());
    let pipeline = pipeline(config)?;
    let client = build_client(config)?;
    let journals = config
        .paths
        .journals
        .clone()
        .unwrap_or_else(|| PathBuf::from("journals"));
    std::fs::create_dir_all(&journals)
        .with_context(|| format!("creating {}", journals.display()))?;
    let mut service = ServiceConfig::in_dir(&journals);
    service.bearer_token = std::env::var(&config.serve.token_env)
        .ok()
        .filter(|t| !t.is_empty());
    let state = AppState::new(pipeline, client, &service)?;

    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .with_context(|| format!("binding {bind}"))?;
        println!("listening on {}", listener.local_addr()?);
        hilrag_service::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok::<(), anyhow::Error>(())
    })?;
    Ok(())
}
