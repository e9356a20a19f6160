//! Base embedders, cosine similarity, and the trainable square adapter that
//! sits on top of a frozen base embedder.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::text;

pub const DEFAULT_DIMENSION: usize = 256;

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("adapter weights contain non-finite values")]
    NonFiniteWeights,
    #[error("embedding provider failed after {attempts} attempt(s): {detail}")]
    ProviderFailure { attempts: u32, detail: String },
    #[error("invalid embedder configuration: {0}")]
    InvalidConfig(String),
    #[error("adapter file: {0}")]
    AdapterFile(String),
}

/// Fixed-length real vector; `normalized` vectors have unit L2 norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f64>,
    normalized: bool,
}

impl Embedding {
    /// Wraps raw values without normalizing.
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            normalized: false,
        }
    }

    /// L2-normalizes `values`; an all-zero input stays zero and unnormalized.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = l2(&values);
        if norm == 0.0 {
            return Self::raw(values);
        }
        values.iter_mut().for_each(|x| *x /= norm);
        Self {
            values,
            normalized: true,
        }
    }

    /// Restores a vector exactly as stored, without re-normalizing.
    pub(crate) fn from_parts(values: Vec<f64>, normalized: bool) -> Self {
        Self { values, normalized }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::raw(vec![0.0; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&x| x == 0.0)
    }

    pub fn norm(&self) -> f64 {
        l2(&self.values)
    }

    /// Checks the vector invariants against an expected dimension.
    pub fn check(&self, dim: usize) -> Result<(), EmbedError> {
        if self.values.len() != dim {
            return Err(EmbedError::DimensionMismatch {
                expected: dim,
                actual: self.values.len(),
            });
        }
        if self.values.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::InvalidConfig(
                "non-finite embedding entry".into(),
            ));
        }
        if self.normalized && (self.norm() - 1.0).abs() > NORM_TOLERANCE {
            return Err(EmbedError::InvalidConfig(
                "normalized flag set on non-unit vector".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity clamped to [-1, 1]; zero vectors score 0 against anything.
pub fn cosine(u: &Embedding, v: &Embedding) -> Result<f64, EmbedError> {
    cosine_slices(u.values(), v.values())
}

pub fn cosine_slices(u: &[f64], v: &[f64]) -> Result<f64, EmbedError> {
    if u.len() != v.len() {
        return Err(EmbedError::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let (nu, nv) = (l2(u), l2(v));
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// 64-bit FNV-1a over the UTF-8 bytes of `s`.
pub fn fnv1a64(s: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    s.bytes()
        .fold(OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Signed feature hashing: each lowercased alphanumeric token adds ±1 to
/// bucket `fnv1a64(token) % dim` (sign from the hash's top bit), then the
/// accumulator is L2-normalized.
pub fn hash_embed(text: &str, dim: usize) -> Embedding {
    assert!(dim >= 2, "hash embedding dimension must be at least 2");
    let mut acc = vec![0.0f64; dim];
    for tok in text::tokens(text) {
        let h = fnv1a64(&tok);
        let bucket = (h % dim as u64) as usize;
        acc[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
    Embedding::normalized(acc)
}

/// A frozen base embedder.
pub trait Embedder: Send + Sync {
    /// Stable identifier, recorded in adapters and snapshots.
    fn id(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbedError> {
        exec::map(texts, |t| self.embed(t)).into_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim < 2 {
            return Err(EmbedError::InvalidConfig(format!("dimension {dim} < 2")));
        }
        Ok(Self { dim })
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIMENSION,
        }
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("fnv1a-hash-{}", self.dim)
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        Ok(hash_embed(text, self.dim))
    }
}

/// Remote embedding service speaking `{"input": [...]}` →
/// `{"data": [{"embedding": [...]}]}`. Returned vectors are L2-normalized.
pub struct ExternalEmbedder {
    endpoint: String,
    model: Option<String>,
    dim: usize,
    api_key_env: Option<String>,
    max_retries: u32,
    agent: ureq::Agent,
}

impl fmt::Debug for ExternalEmbedder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalEmbedder")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("dim", &self.dim)
            .field("max_retries", &self.max_retries)
            .finish_non_exhaustive()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

impl ExternalEmbedder {
    pub fn new(descriptor: &EmbeddingProviderDescriptor) -> Result<Self, EmbedError> {
        let endpoint = descriptor.endpoint.clone().ok_or_else(|| {
            EmbedError::InvalidConfig("external provider needs an endpoint".into())
        })?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(descriptor.timeout_secs.max(1))))
            .http_status_as_error(true)
            .build()
            .into();
        Ok(Self {
            endpoint,
            model: descriptor.model.clone(),
            dim: descriptor.dimension,
            api_key_env: descriptor.api_key_env.clone(),
            max_retries: descriptor.max_retries,
            agent,
        })
    }

    fn request_once(&self, texts: &[String]) -> Result<Vec<Embedding>, String> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(var) = &self.api_key_env {
            if let Ok(key) = std::env::var(var) {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
        }
        let body = EmbedRequest {
            input: texts,
            model: self.model.as_deref(),
        };
        let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
        let parsed: EmbedResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        if parsed.data.len() != texts.len() {
            return Err(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            ));
        }
        parsed
            .data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.dim {
                    Err(format!(
                        "expected dimension {}, got {}",
                        self.dim,
                        d.embedding.len()
                    ))
                } else if d.embedding.iter().any(|x| !x.is_finite()) {
                    Err("non-finite embedding value".to_string())
                } else {
                    Ok(Embedding::normalized(d.embedding))
                }
            })
            .collect()
    }
}

impl Embedder for ExternalEmbedder {
    fn id(&self) -> String {
        format!(
            "external:{}",
            self.model.as_deref().unwrap_or(&self.endpoint)
        )
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        let mut out = self.embed_batch(&[text.to_string()])?;
        Ok(out.remove(0))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let attempts = self.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.request_once(texts) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    tracing::warn!(attempt = attempt + 1, error = %e, "embedding request failed");
                    last = e;
                    if attempt + 1 < attempts {
                        std::thread::sleep(Duration::from_millis(50 << attempt.min(6)));
                    }
                }
            }
        }
        Err(EmbedError::ProviderFailure {
            attempts,
            detail: last,
        })
    }
}

/// Frozen base embedder with a precomputed table of vectors. Texts outside
/// the table fall through to the wrapped embedder.
pub struct CachedEmbedder {
    inner: Arc<dyn Embedder>,
    table: HashMap<String, Embedding>,
}

impl CachedEmbedder {
    /// Embeds every distinct text once (in one batch) and keeps the results.
    pub fn warm<'a>(
        inner: Arc<dyn Embedder>,
        texts: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self, EmbedError> {
        let mut unique: Vec<String> = texts.into_iter().map(str::to_string).collect();
        unique.sort_unstable();
        unique.dedup();
        let vecs = inner.embed_batch(&unique)?;
        Ok(Self {
            inner,
            table: unique.into_iter().zip(vecs).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Embedder for CachedEmbedder {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        match self.table.get(text) {
            Some(v) => Ok(v.clone()),
            None => self.inner.embed(text),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Hash,
    External,
}

/// Configuration for building an [`Embedder`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingProviderDescriptor {
    pub kind: ProviderKind,
    pub dimension: usize,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Name of the environment variable holding the bearer credential.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_retries() -> u32 {
    2
}

fn default_timeout() -> u64 {
    30
}

impl Default for EmbeddingProviderDescriptor {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Hash,
            dimension: DEFAULT_DIMENSION,
            endpoint: None,
            model: None,
            api_key_env: None,
            max_retries: default_retries(),
            timeout_secs: default_timeout(),
        }
    }
}

impl EmbeddingProviderDescriptor {
    pub fn build(&self) -> Result<Arc<dyn Embedder>, EmbedError> {
        if self.dimension < 2 {
            return Err(EmbedError::InvalidConfig(format!(
                "dimension {} < 2",
                self.dimension
            )));
        }
        Ok(match self.kind {
            ProviderKind::Hash => Arc::new(HashEmbedder::new(self.dimension)?),
            ProviderKind::External => Arc::new(ExternalEmbedder::new(self)?),
        })
    }
}

// ---------------------------------------------------------------------------
// Adapter
// ---------------------------------------------------------------------------

pub const ADAPTER_FORMAT: &str = "hilrag-adapter";
pub const ADAPTER_FORMAT_VERSION: u32 = 1;

/// Square matrix `W` applied to base embeddings: `normalize(W · x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterModel {
    dimension: usize,
    /// Row-major, `dimension * dimension` entries.
    weights: Vec<f64>,
    pub base_id: String,
    pub epochs_trained: u32,
    pub config_digest: String,
}

#[derive(Serialize, Deserialize)]
struct AdapterFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: AdapterModel,
}

impl AdapterModel {
    pub fn identity(dimension: usize, base_id: impl Into<String>) -> Self {
        let mut weights = vec![0.0; dimension * dimension];
        for i in 0..dimension {
            weights[i * dimension + i] = 1.0;
        }
        Self {
            dimension,
            weights,
            base_id: base_id.into(),
            epochs_trained: 0,
            config_digest: "identity".into(),
        }
    }

    pub fn from_weights(
        dimension: usize,
        weights: Vec<f64>,
        base_id: impl Into<String>,
    ) -> Result<Self, EmbedError> {
        if weights.len() != dimension * dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: dimension * dimension,
                actual: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(EmbedError::NonFiniteWeights);
        }
        Ok(Self {
            dimension,
            weights,
            base_id: base_id.into(),
            epochs_trained: 0,
            config_digest: "custom".into(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.dimension + col]
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn is_identity(&self) -> bool {
        let d = self.dimension;
        self.weights
            .iter()
            .enumerate()
            .all(|(k, &w)| w == if k / d == k % d { 1.0 } else { 0.0 })
    }

    /// Returns a copy with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|w| *w *= factor);
        out
    }

    /// Unnormalized product `W · x`.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dimension)
            .map(|row| dot(row, x))
            .collect()
    }

    /// `normalize(W · v)`; zero input stays zero.
    pub fn apply(&self, v: &Embedding) -> Result<Embedding, EmbedError> {
        if v.dimension() != self.dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dimension,
                actual: v.dimension(),
            });
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(EmbedError::NonFiniteWeights);
        }
        if self.is_identity() && (v.is_normalized() || v.is_zero()) {
            return Ok(v.clone());
        }
        Ok(Embedding::normalized(self.project(v.values())))
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let file = AdapterFile {
            format: ADAPTER_FORMAT.into(),
            version: ADAPTER_FORMAT_VERSION,
            model: self.clone(),
        };
        let body = serde_json::to_vec(&file).map_err(|e| EmbedError::AdapterFile(e.to_string()))?;
        fs::write(path, body)
            .map_err(|e| EmbedError::AdapterFile(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let raw = fs::read(path)
            .map_err(|e| EmbedError::AdapterFile(format!("{}: {e}", path.display())))?;
        let file: AdapterFile =
            serde_json::from_slice(&raw).map_err(|e| EmbedError::AdapterFile(e.to_string()))?;
        if file.format != ADAPTER_FORMAT || file.version != ADAPTER_FORMAT_VERSION {
            return Err(EmbedError::AdapterFile(format!(
                "unsupported adapter format {} v{}",
                file.format, file.version
            )));
        }
        let m = file.model;
        if m.weights.len() != m.dimension * m.dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: m.dimension * m.dimension,
                actual: m.weights.len(),
            });
        }
        if m.weights.iter().any(|w| !w.is_finite()) {
            return Err(EmbedError::NonFiniteWeights);
        }
        Ok(m)
    }
}

/// Base embedder plus optional adapter: the full text → vector map.
#[derive(Clone)]
pub struct Encoder {
    base: Arc<dyn Embedder>,
    adapter: Option<Arc<AdapterModel>>,
}

impl fmt::Debug for Encoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Encoder")
            .field("base", &self.base.id())
            .field("adapter", &self.adapter_digest())
            .finish()
    }
}

impl Encoder {
    pub fn new(base: Arc<dyn Embedder>) -> Self {
        Self {
            base,
            adapter: None,
        }
    }

    pub fn hash(dim: usize) -> Result<Self, EmbedError> {
        Ok(Self::new(Arc::new(HashEmbedder::new(dim)?)))
    }

    pub fn with_adapter(self, adapter: AdapterModel) -> Result<Self, EmbedError> {
        if adapter.dimension() != self.base.dimension() {
            return Err(EmbedError::DimensionMismatch {
                expected: self.base.dimension(),
                actual: adapter.dimension(),
            });
        }
        Ok(Self {
            adapter: Some(Arc::new(adapter)),
            ..self
        })
    }

    pub fn base(&self) -> &Arc<dyn Embedder> {
        &self.base
    }

    pub fn adapter(&self) -> Option<&AdapterModel> {
        self.adapter.as_deref()
    }

    pub fn dimension(&self) -> usize {
        self.base.dimension()
    }

    /// Digest of the adapter config, or `"none"` without an adapter.
    pub fn adapter_digest(&self) -> String {
        self.adapter
            .as_ref()
            .map(|a| a.config_digest.clone())
            .unwrap_or_else(|| "none".into())
    }

    pub fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        let base = self.base.embed(text)?;
        match &self.adapter {
            Some(a) => a.apply(&base),
            None => Ok(base),
        }
    }

    pub fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbedError> {
        let base = self.base.embed_batch(texts)?;
        match &self.adapter {
            Some(a) => exec::map(&base, |v| a.apply(v)).into_iter().collect(),
            None => Ok(base),
        }
    }
}

/// `embed_text` in free-function form.
pub fn embed_text(
    provider: &dyn Embedder,
    adapter: Option<&AdapterModel>,
    text: &str,
) -> Result<Embedding, EmbedError> {
    if let Some(a) = adapter {
        if a.dimension() != provider.dimension() {
            return Err(EmbedError::DimensionMismatch {
                expected: provider.dimension(),
                actual: a.dimension(),
            });
        }
    }
    let base = provider.embed(text)?;
    match adapter {
        Some(a) => a.apply(&base),
        None => Ok(base),
    }
}
