//! Contrastive adapter training.
//!
//! The adapter output is `y = W·x / |W·x|` for a frozen base vector `x`.
//! Both loss forms act on cosines of adapter outputs; gradients are taken
//! through the normalization:
//!
//! ```text
//! dL/dz = (g - (g·y) y) / |z|,   dL/dW = Σ dL/dz ⊗ x
//! ```
//!
//! where `g = dL/dy`. Hinges use the subgradient 0 exactly at the kink.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TripletRecord;
use crate::digest;
use crate::embed::{
    cosine, dot, l2, AdapterModel, CachedEmbedder, EmbedError, Embedder, Embedding, Encoder,
};
use crate::eval;
use crate::exec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite gradient in epoch {epoch}")]
    NonFiniteGradient {
        epoch: u32,
        history: TrainingHistory,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Triplet,
    Pairwise,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "triplet" => Ok(Self::Triplet),
            "pairwise" => Ok(Self::Pairwise),
            other => Err(format!(
                "unknown loss `{other}` (expected triplet or pairwise)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub loss: LossKind,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    pub use_negatives: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Triplet,
            margin: 0.2,
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            use_negatives: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad(format!("margin {} must be finite and >= 0", self.margin));
        }
        // zero is accepted: it leaves the adapter at identity
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate {} must be finite and >= 0",
                self.learning_rate
            ));
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch size must be >= 1".into());
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        digest::config_digest(self)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    /// Mean per-triplet loss of each epoch, measured before each batch update.
    pub epoch_loss: Vec<f64>,
    /// Benchmark triplet accuracy after each epoch, when a benchmark was given.
    pub epoch_accuracy: Option<Vec<f64>>,
}

impl TrainingHistory {
    pub fn epochs_completed(&self) -> usize {
        self.epoch_loss.len()
    }
}

/// `max(0, m − cos(a,p) + cos(a,n))`.
pub fn triplet_loss(
    a: &Embedding,
    p: &Embedding,
    n: &Embedding,
    margin: f64,
) -> Result<f64, EmbedError> {
    Ok((margin - cosine(a, p)? + cosine(a, n)?).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLabel {
    Positive,
    Negative,
}

/// Positive pairs: `1 − cos(x,y)`; negative pairs: `max(0, cos(x,y) − m)`.
pub fn pairwise_loss(
    x: &Embedding,
    y: &Embedding,
    label: PairLabel,
    margin: f64,
) -> Result<f64, EmbedError> {
    let c = cosine(x, y)?;
    Ok(match label {
        PairLabel::Positive => 1.0 - c,
        PairLabel::Negative => (c - margin).max(0.0),
    })
}

/// Base vectors of one triplet.
#[derive(Debug, Clone)]
pub(crate) struct BaseTriplet {
    a: Vec<f64>,
    p: Vec<f64>,
    n: Option<Vec<f64>>,
}

impl BaseTriplet {
    fn from_record(t: &TripletRecord, base: &dyn Embedder) -> Result<Self, EmbedError> {
        Ok(Self {
            a: base.embed(&t.anchor)?.into_values(),
            p: base.embed(&t.positive)?.into_values(),
            n: t.negative
                .as_deref()
                .map(|n| base.embed(n).map(Embedding::into_values))
                .transpose()?,
        })
    }
}

/// Normalized adapter output and the norm of the pre-normalization product.
struct Projected {
    y: Vec<f64>,
    norm: f64,
}

fn project(model: &AdapterModel, x: &[f64]) -> Projected {
    let z = model.project(x);
    let norm = l2(&z);
    let y = if norm > 0.0 {
        z.iter().map(|v| v / norm).collect()
    } else {
        z
    };
    Projected { y, norm }
}

/// Per-triplet loss plus `(dL/dz, which base vector)` terms; 0 = a, 1 = p, 2 = n.
struct ItemTerms {
    loss: f64,
    terms: Vec<(usize, Vec<f64>)>,
}

/// Argument of the hinge term, when the configured loss has one.
fn hinge_argument(
    item: &BaseTriplet,
    model: &AdapterModel,
    config: &TrainingConfig,
) -> Option<f64> {
    let n = item.n.as_ref().filter(|_| config.use_negatives)?;
    let (a, p, n) = (
        project(model, &item.a),
        project(model, &item.p),
        project(model, n),
    );
    Some(match config.loss {
        LossKind::Triplet => config.margin - dot(&a.y, &p.y) + dot(&a.y, &n.y),
        LossKind::Pairwise => dot(&a.y, &n.y) - config.margin,
    })
}

fn item_terms(item: &BaseTriplet, model: &AdapterModel, config: &TrainingConfig) -> ItemTerms {
    let a = project(model, &item.a);
    let p = project(model, &item.p);
    let n = item
        .n
        .as_ref()
        .filter(|_| config.use_negatives)
        .map(|n| project(model, n));
    let d = a.y.len();
    let cap = dot(&a.y, &p.y);

    let mut ga = vec![0.0; d];
    let mut gp = vec![0.0; d];
    let mut gn = vec![0.0; d];
    let mut loss;
    let axpy =
        |out: &mut [f64], k: f64, v: &[f64]| out.iter_mut().zip(v).for_each(|(o, x)| *o += k * x);

    match (&n, config.loss) {
        (Some(n), LossKind::Triplet) => {
            let h = config.margin - cap + dot(&a.y, &n.y);
            loss = h.max(0.0);
            if h > 0.0 {
                axpy(&mut ga, 1.0, &n.y);
                axpy(&mut ga, -1.0, &p.y);
                axpy(&mut gp, -1.0, &a.y);
                axpy(&mut gn, 1.0, &a.y);
            }
        }
        (Some(n), LossKind::Pairwise) => {
            loss = 1.0 - cap;
            axpy(&mut ga, -1.0, &p.y);
            axpy(&mut gp, -1.0, &a.y);
            let h = dot(&a.y, &n.y) - config.margin;
            if h > 0.0 {
                loss += h;
                axpy(&mut ga, 1.0, &n.y);
                axpy(&mut gn, 1.0, &a.y);
            }
        }
        (None, _) => {
            loss = 1.0 - cap;
            axpy(&mut ga, -1.0, &p.y);
            axpy(&mut gp, -1.0, &a.y);
        }
    }

    let through_norm = |g: Vec<f64>, pr: &Projected| -> Option<Vec<f64>> {
        if pr.norm == 0.0 || g.iter().all(|&x| x == 0.0) {
            return None;
        }
        let gy = dot(&g, &pr.y);
        Some(
            g.iter()
                .zip(&pr.y)
                .map(|(gi, yi)| (gi - gy * yi) / pr.norm)
                .collect(),
        )
    };
    let mut terms = Vec::with_capacity(3);
    if let Some(dz) = through_norm(ga, &a) {
        terms.push((0, dz));
    }
    if let Some(dz) = through_norm(gp, &p) {
        terms.push((1, dz));
    }
    if let Some(n) = &n {
        if let Some(dz) = through_norm(gn, n) {
            terms.push((2, dz));
        }
    }
    ItemTerms { loss, terms }
}

fn item_loss(item: &BaseTriplet, model: &AdapterModel, config: &TrainingConfig) -> f64 {
    item_terms(item, model, config).loss
}

/// Mean batch loss and its gradient (row-major, `D×D`).
///
/// Per-item terms are computed in parallel; rows of the gradient are then
/// accumulated independently, each in fixed item order, so the result does
/// not depend on the execution mode.
pub(crate) fn batch_gradient(
    model: &AdapterModel,
    batch: &[&BaseTriplet],
    config: &TrainingConfig,
) -> (f64, Vec<f64>) {
    let d = model.dimension();
    let items: Vec<ItemTerms> = exec::map(batch, |t| item_terms(t, model, config));
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; d * d];
    exec::for_each_chunk_mut(&mut grad, d, |i, row| {
        for (item, t) in items.iter().zip(batch) {
            for (which, dz) in &item.terms {
                let coef = dz[i] * scale;
                if coef == 0.0 {
                    continue;
                }
                let x = match which {
                    0 => &t.a,
                    1 => &t.p,
                    _ => t.n.as_ref().expect("negative term without negative"),
                };
                row.iter_mut().zip(x).for_each(|(g, xj)| *g += coef * xj);
            }
        }
    });
    let loss = items.iter().map(|it| it.loss).sum::<f64>() * scale;
    (loss, grad)
}

/// Analytic gradient of the mean batch loss with respect to every adapter
/// weight (row-major).
pub fn loss_gradient(
    model: &AdapterModel,
    batch: &[TripletRecord],
    base: &dyn Embedder,
    config: &TrainingConfig,
) -> Result<Vec<f64>, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let items = batch
        .iter()
        .map(|t| BaseTriplet::from_record(t, base))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&BaseTriplet> = items.iter().collect();
    let (_, grad) = batch_gradient(model, &refs, config);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient {
            epoch: 0,
            history: TrainingHistory::default(),
        });
    }
    Ok(grad)
}

/// Mean loss of `batch` under `model`.
pub fn batch_loss(
    model: &AdapterModel,
    batch: &[TripletRecord],
    base: &dyn Embedder,
    config: &TrainingConfig,
) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut total = 0.0;
    for t in batch {
        total += item_loss(&BaseTriplet::from_record(t, base)?, model, config);
    }
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AdapterModel,
    pub history: TrainingHistory,
}

/// Fits an adapter from the identity with plain per-batch gradient descent.
///
/// Each epoch shuffles the training set with a generator seeded from
/// `config.seed` and the epoch number. When `benchmark` is given, its triplet
/// accuracy is recorded after every epoch.
pub fn train_adapter(
    base: Arc<dyn Embedder>,
    triplets: &[TripletRecord],
    config: &TrainingConfig,
    benchmark: Option<&[TripletRecord]>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if triplets.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let texts = triplets
        .iter()
        .chain(benchmark.unwrap_or_default())
        .flat_map(|t| {
            [
                Some(t.anchor.as_str()),
                Some(t.positive.as_str()),
                t.negative.as_deref(),
            ]
        })
        .flatten();
    let cached: Arc<dyn Embedder> = Arc::new(CachedEmbedder::warm(base.clone(), texts)?);
    let items = triplets
        .iter()
        .map(|t| BaseTriplet::from_record(t, cached.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;

    let dim = base.dimension();
    let mut model = AdapterModel::identity(dim, base.id());
    model.config_digest = config.digest();
    let mut history = TrainingHistory {
        epoch_loss: Vec::new(),
        epoch_accuracy: benchmark.map(|_| Vec::new()),
    };
    let mut order: Vec<usize> = (0..items.len()).collect();

    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(u64::from(epoch)));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&BaseTriplet> = chunk.iter().map(|&i| &items[i]).collect();
            let (loss, grad) = batch_gradient(&model, &batch, config);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteGradient { epoch, history });
            }
            loss_sum += loss * batch.len() as f64;
            model
                .weights_mut()
                .iter_mut()
                .zip(&grad)
                .for_each(|(w, g)| *w -= config.learning_rate * g);
        }
        history.epoch_loss.push(loss_sum / items.len() as f64);
        model.epochs_trained = epoch + 1;
        if let (Some(bench), Some(acc)) = (benchmark, history.epoch_accuracy.as_mut()) {
            let enc = Encoder::new(cached.clone()).with_adapter(model.clone())?;
            let with_neg: Vec<TripletRecord> = bench
                .iter()
                .filter(|t| t.negative.is_some())
                .cloned()
                .collect();
            let report = eval::triplet_accuracy(&enc, &with_neg)
                .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
            acc.push(report.accuracy);
        }
        tracing::debug!(
            epoch,
            loss = history.epoch_loss.last().copied().unwrap_or_default(),
            "epoch done"
        );
    }
    Ok(TrainOutcome { model, history })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdReport {
    pub max_relative_error: f64,
    pub entries_checked: usize,
    /// The triplet sits within 1e-6 of a hinge kink; nothing was compared.
    pub near_kink: bool,
}

/// Compares the analytic gradient of a single triplet with central finite
/// differences. All entries are checked for `D <= 32`; above that a seeded
/// subset of 128 entries, half of them in columns where some base vector is
/// nonzero. Relative error uses `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check(
    model: &AdapterModel,
    triplet: &TripletRecord,
    base: &dyn Embedder,
    config: &TrainingConfig,
    eps: f64,
) -> Result<FdReport, TrainError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(TrainError::InvalidConfig(format!(
            "epsilon {eps} must be > 0"
        )));
    }
    let item = BaseTriplet::from_record(triplet, base)?;
    if hinge_argument(&item, model, config).is_some_and(|h| h.abs() < 1e-6) {
        return Ok(FdReport {
            max_relative_error: 0.0,
            entries_checked: 0,
            near_kink: true,
        });
    }
    let (_, analytic) = batch_gradient(model, &[&item], config);
    let d = model.dimension();

    let entries: Vec<usize> = if d <= 32 {
        (0..d * d).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let active: Vec<usize> = (0..d)
            .filter(|&j| {
                item.a[j] != 0.0 || item.p[j] != 0.0 || item.n.as_ref().is_some_and(|n| n[j] != 0.0)
            })
            .collect();
        let mut picked: Vec<usize> = (0..64).map(|_| rng.random_range(0..d * d)).collect();
        if !active.is_empty() {
            picked.extend(
                (0..64).map(|_| {
                    rng.random_range(0..d) * d + active[rng.random_range(0..active.len())]
                }),
            );
        } else {
            picked.extend((0..64).map(|_| rng.random_range(0..d * d)));
        }
        picked
    };

    let errors = exec::map(&entries, |&k| {
        let mut plus = model.clone();
        plus.weights_mut()[k] += eps;
        let mut minus = model.clone();
        minus.weights_mut()[k] -= eps;
        let numeric =
            (item_loss(&item, &plus, config) - item_loss(&item, &minus, config)) / (2.0 * eps);
        let a = analytic[k];
        (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8)
    });
    Ok(FdReport {
        max_relative_error: errors.into_iter().fold(0.0, f64::max),
        entries_checked: entries.len(),
        near_kink: false,
    })
}

/// Deterministic map from triplet text to base vectors, for callers that
/// evaluate many adapters over one dataset.
pub fn warm_cache(
    base: Arc<dyn Embedder>,
    triplets: &[TripletRecord],
) -> Result<CachedEmbedder, EmbedError> {
    let texts: Vec<&str> = triplets
        .iter()
        .flat_map(|t| {
            [
                Some(t.anchor.as_str()),
                Some(t.positive.as_str()),
                t.negative.as_deref(),
            ]
        })
        .flatten()
        .collect();
    CachedEmbedder::warm(base, texts)
}
