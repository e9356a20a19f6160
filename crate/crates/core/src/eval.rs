//! Evaluation metrics and report rendering.
//!
//! Accuracies are carried as exact counts; floating values are derived from
//! them only for display and comparison.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TripletRecord;
use crate::embed::{cosine_slices, EmbedError, Embedding, Encoder};
use crate::exec;
use crate::index::{IndexError, VectorIndex};
use crate::rag::{ChatClient, RagError, RagPipeline};

/// Containment depths recorded by [`top1_accuracy`].
pub const CONTAINMENT_KS: [usize; 3] = [1, 3, 5];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("triplet {0} has no negative")]
    MissingNegative(usize),
    #[error("query {query:?} targets unindexed document {doc_id}")]
    UnknownTrueId { query: String, doc_id: String },
    #[error("generation client failed after {} of {} queries: {detail}", .partial.evaluated, .partial.total)]
    ClientFailure {
        detail: String,
        partial: Box<AttributionReport>,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Rag(#[from] RagError),
    #[error("report output {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvalQuery {
    pub query: String,
    pub true_doc_id: String,
}

impl EvalQuery {
    pub fn new(query: impl Into<String>, true_doc_id: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            true_doc_id: true_doc_id.into(),
        }
    }
}

fn ratio(correct: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        correct as f64 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletEvalReport {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl fmt::Display for TripletEvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{} ({:.2}%)",
            self.correct,
            self.n,
            100.0 * self.accuracy
        )
    }
}

fn embed_unique(
    encoder: &Encoder,
    texts: &[&str],
) -> Result<HashMap<String, Embedding>, EmbedError> {
    let mut unique: Vec<String> = texts.iter().map(|t| t.to_string()).collect();
    unique.sort();
    unique.dedup();
    let vectors = encoder.embed_batch(&unique)?;
    Ok(unique.into_iter().zip(vectors).collect())
}

/// Fraction of triplets where the anchor is strictly closer to the positive
/// than to the negative. Ties count as incorrect.
pub fn triplet_accuracy(
    encoder: &Encoder,
    triplets: &[TripletRecord],
) -> Result<TripletEvalReport, EvalError> {
    if triplets.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut texts = Vec::with_capacity(triplets.len() * 3);
    for (i, t) in triplets.iter().enumerate() {
        let negative = t.negative.as_deref().ok_or(EvalError::MissingNegative(i))?;
        texts.extend([t.anchor.as_str(), t.positive.as_str(), negative]);
    }
    let table = embed_unique(encoder, &texts)?;
    let wins = exec::map(triplets, |t| -> Result<bool, EmbedError> {
        let a = table[&t.anchor].values();
        let p = table[&t.positive].values();
        let n = table[t.negative.as_deref().unwrap_or_default()].values();
        Ok(cosine_slices(a, p)? > cosine_slices(a, n)?)
    });
    let mut correct = 0;
    for w in wins {
        correct += usize::from(w?);
    }
    Ok(TripletEvalReport {
        n: triplets.len(),
        correct,
        accuracy: ratio(correct, triplets.len()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEvalReport {
    pub n: usize,
    pub top1_correct: usize,
    pub topk_contained: BTreeMap<usize, usize>,
    pub accuracy: f64,
    pub topk_accuracy: BTreeMap<usize, f64>,
    /// 1-based rank of the true document per query, when within the deepest k.
    pub ranks: Vec<Option<usize>>,
}

impl fmt::Display for RetrievalEvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "top-1 {}/{} ({:.2}%)",
            self.top1_correct,
            self.n,
            100.0 * self.accuracy
        )?;
        for (k, c) in &self.topk_contained {
            write!(f, ", top-{k} {c}/{}", self.n)?;
        }
        Ok(())
    }
}

fn check_known(index: &VectorIndex, queries: &[EvalQuery]) -> Result<(), EvalError> {
    match queries.iter().find(|q| !index.contains(&q.true_doc_id)) {
        Some(q) => Err(EvalError::UnknownTrueId {
            query: q.query.clone(),
            doc_id: q.true_doc_id.clone(),
        }),
        None => Ok(()),
    }
}

/// 1-based rank of each query's true document within the top `depth` hits.
fn true_ranks(
    index: &VectorIndex,
    encoder: &Encoder,
    queries: &[EvalQuery],
    depth: usize,
) -> Result<Vec<Option<usize>>, EvalError> {
    check_known(index, queries)?;
    let texts: Vec<String> = queries.iter().map(|q| q.query.clone()).collect();
    let vectors = encoder.embed_batch(&texts)?;
    let pairs: Vec<(&EvalQuery, &Embedding)> = queries.iter().zip(&vectors).collect();
    exec::map(&pairs, |(q, v)| -> Result<Option<usize>, EvalError> {
        let hits = index.search_topk(v, depth, None)?;
        Ok(hits
            .iter()
            .position(|h| h.doc_id == q.true_doc_id)
            .map(|r| r + 1))
    })
    .into_iter()
    .collect()
}

/// Top-1 accuracy with top-k containment for k in [`CONTAINMENT_KS`].
pub fn top1_accuracy(
    index: &VectorIndex,
    encoder: &Encoder,
    queries: &[EvalQuery],
) -> Result<RetrievalEvalReport, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let depth = *CONTAINMENT_KS.iter().max().expect("non-empty");
    let ranks = true_ranks(index, encoder, queries, depth)?;
    let n = queries.len();
    let topk_contained: BTreeMap<usize, usize> = CONTAINMENT_KS
        .iter()
        .map(|&k| {
            (
                k,
                ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count(),
            )
        })
        .collect();
    let top1_correct = topk_contained[&1];
    Ok(RetrievalEvalReport {
        n,
        top1_correct,
        accuracy: ratio(top1_correct, n),
        topk_accuracy: topk_contained
            .iter()
            .map(|(&k, &c)| (k, ratio(c, n)))
            .collect(),
        topk_contained,
        ranks,
    })
}

/// The queries whose true document is among the top `k` hits, in input order.
pub fn select_grounded_queries(
    index: &VectorIndex,
    encoder: &Encoder,
    queries: &[EvalQuery],
    k: usize,
) -> Result<Vec<EvalQuery>, EvalError> {
    if k == 0 {
        return Err(IndexError::InvalidK.into());
    }
    let ranks = true_ranks(index, encoder, queries, k)?;
    Ok(queries
        .iter()
        .zip(ranks)
        .filter(|(_, r)| r.is_some())
        .map(|(q, _)| q.clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionOutcome {
    pub query: String,
    pub true_doc_id: String,
    pub attributed_doc_id: Option<String>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub total: usize,
    pub evaluated: usize,
    pub correct: usize,
    pub unattributed: usize,
    pub accuracy: f64,
    /// False when the run stopped early; counts then cover `evaluated` only.
    pub valid: bool,
    pub outcomes: Vec<AttributionOutcome>,
}

impl fmt::Display for AttributionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{} attributed correctly ({:.2}%), {} unattributed",
            self.correct,
            self.evaluated,
            100.0 * self.accuracy,
            self.unattributed
        )?;
        if !self.valid {
            write!(
                f,
                " [INVALID: stopped after {} of {}]",
                self.evaluated, self.total
            )?;
        }
        Ok(())
    }
}

/// Runs each query through the pipeline and compares the parsed `SOURCE:`
/// id with the true document. Queries run sequentially so scripted clients
/// replay in order.
pub fn attribution_accuracy(
    pipeline: &RagPipeline,
    client: &dyn ChatClient,
    queries: &[EvalQuery],
) -> Result<AttributionReport, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut report = AttributionReport {
        total: queries.len(),
        evaluated: 0,
        correct: 0,
        unattributed: 0,
        accuracy: 0.0,
        valid: true,
        outcomes: Vec::with_capacity(queries.len()),
    };
    for q in queries {
        let trace = pipeline.answer(&q.query, None, client)?;
        let generation = match trace.generation {
            Ok(g) => g,
            Err(RagError::ClientFailure(detail)) => {
                report.valid = false;
                report.accuracy = ratio(report.correct, report.evaluated);
                return Err(EvalError::ClientFailure {
                    detail,
                    partial: Box::new(report),
                });
            }
            Err(e) => return Err(e.into()),
        };
        let correct = generation.attributed_doc_id.as_deref() == Some(q.true_doc_id.as_str());
        report.evaluated += 1;
        report.correct += usize::from(correct);
        report.unattributed += usize::from(generation.attributed_doc_id.is_none());
        report.outcomes.push(AttributionOutcome {
            query: q.query.clone(),
            true_doc_id: q.true_doc_id.clone(),
            attributed_doc_id: generation.attributed_doc_id,
            correct,
        });
    }
    report.accuracy = ratio(report.correct, report.evaluated);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub params_m: Option<f64>,
    pub accuracy_pct: f64,
}

impl ComparisonRow {
    pub fn new(label: impl Into<String>, accuracy_pct: f64) -> Self {
        Self {
            label: label.into(),
            params_m: None,
            accuracy_pct,
        }
    }

    pub fn from_counts(label: impl Into<String>, correct: usize, n: usize) -> Self {
        Self::new(label, 100.0 * ratio(correct, n))
    }

    pub fn with_params(mut self, params_m: f64) -> Self {
        self.params_m = Some(params_m);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparedRow {
    pub label: String,
    pub params_m: Option<f64>,
    pub accuracy_pct: f64,
    /// Percentage points relative to the baseline row.
    pub delta_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub rows: Vec<ComparedRow>,
}

/// Sorts rows by accuracy descending (ties by label) and computes deltas
/// against the first input row.
pub fn compare_reports(rows: &[ComparisonRow]) -> Comparison {
    let base = rows.first().map(|r| r.accuracy_pct).unwrap_or(0.0);
    let mut out: Vec<ComparedRow> = rows
        .iter()
        .map(|r| ComparedRow {
            label: r.label.clone(),
            params_m: r.params_m,
            accuracy_pct: r.accuracy_pct,
            delta_pct: r.accuracy_pct - base,
        })
        .collect();
    out.sort_by(|a, b| {
        b.accuracy_pct
            .total_cmp(&a.accuracy_pct)
            .then_with(|| a.label.cmp(&b.label))
    });
    Comparison {
        baseline: rows.first().map(|r| r.label.clone()).unwrap_or_default(),
        rows: out,
    }
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.chars().count())
            .chain([5])
            .max()
            .unwrap_or(5);
        let mut out = format!(
            "{:<width$}  {:>9}  {:>11}  {:>8}\n",
            "label", "params(M)", "accuracy(%)", "delta"
        );
        for r in &self.rows {
            let params = r
                .params_m
                .map_or_else(|| "-".to_string(), |p| format!("{p:.0}"));
            out.push_str(&format!(
                "{:<width$}  {:>9}  {:>11.2}  {:>+8.2}\n",
                r.label, params, r.accuracy_pct, r.delta_pct
            ));
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
            .collect()
    }
}

/// A seeded uniform sample of `fraction` of `items` (at least one item when
/// `items` is non-empty), in original order.
pub fn seeded_subset<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Vec<T> {
    if items.is_empty() {
        return Vec::new();
    }
    let fraction = fraction.clamp(0.0, 1.0);
    let amount = ((items.len() as f64 * fraction).round() as usize).clamp(1, items.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, items.len(), amount).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i].clone()).collect()
}

/// Writes `{stem}-{digest}.txt` and `{stem}-{digest}.jsonl` under `dir`.
pub fn write_report(
    dir: &Path,
    stem: &str,
    digest: &str,
    table: &str,
    jsonl: &str,
) -> Result<(PathBuf, PathBuf), EvalError> {
    let io = |path: &Path, e: std::io::Error| EvalError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let txt = dir.join(format!("{stem}-{digest}.txt"));
    let json = dir.join(format!("{stem}-{digest}.jsonl"));
    std::fs::write(&txt, table).map_err(|e| io(&txt, e))?;
    std::fs::write(&json, jsonl).map_err(|e| io(&json, e))?;
    Ok((txt, json))
}
