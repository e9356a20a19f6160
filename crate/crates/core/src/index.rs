//! Exact cosine vector index with metadata filtering, incremental
//! re-embedding and single-file snapshots.
//!
//! # Snapshot layout (format version 1, all integers little-endian)
//!
//! ```text
//! magic          8 bytes   "HRIXSNAP"
//! version        u32       1
//! dimension      u32
//! digest_len     u32, then digest_len bytes of UTF-8 (adapter config digest)
//! entry_count    u64
//! entry_count × {
//!     id_len     u32, then id bytes (UTF-8)
//!     version    u64
//!     normalized u8 (0 or 1)
//!     values     dimension × f64
//!     meta_count u32
//!     meta_count × { key_len u32, key bytes, value_len u32, value bytes }
//! }
//! checksum       32 bytes, SHA-256 of every preceding byte
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{value_to_flat_string, KnowledgeDocument};
use crate::embed::{cosine_slices, EmbedError, Embedding, Encoder};
use crate::exec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("dimension mismatch: index holds {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("snapshot I/O: {0}")]
    Io(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub doc_id: String,
    pub vector: Embedding,
    pub metadata: BTreeMap<String, String>,
    pub version: u64,
}

impl IndexEntry {
    pub fn new(
        doc_id: impl Into<String>,
        vector: Embedding,
        metadata: BTreeMap<String, String>,
    ) -> Self {
        Self {
            doc_id: doc_id.into(),
            vector,
            metadata,
            version: 1,
        }
    }
}

/// Metadata of a document as stored in the index: title, category, and every
/// preserved extra field flattened to a string.
pub fn document_metadata(doc: &KnowledgeDocument) -> BTreeMap<String, String> {
    let mut m: BTreeMap<String, String> = doc
        .metadata
        .iter()
        .map(|(k, v)| (k.clone(), value_to_flat_string(v)))
        .collect();
    m.insert("title".into(), doc.title.clone());
    m.insert("category".into(), doc.category.clone());
    m
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op", content = "value")]
pub enum Predicate {
    /// Exact string equality with the field value.
    Equals(String),
    /// Case-insensitive match against one whitespace/punctuation-separated
    /// token of the field value (`_`, `-` and `.` stay inside tokens).
    ContainsToken(String),
}

/// Splits a metadata value into filter tokens.
pub fn metadata_tokens(value: &str) -> impl Iterator<Item = &str> {
    value
        .split(|c: char| !(c.is_alphanumeric() || matches!(c, '_' | '-' | '.')))
        .filter(|t| !t.is_empty())
}

impl Predicate {
    pub fn matches(&self, value: &str) -> bool {
        match self {
            Predicate::Equals(v) => value == v,
            Predicate::ContainsToken(t) => {
                metadata_tokens(value).any(|tok| tok.eq_ignore_ascii_case(t))
            }
        }
    }
}

/// Conjunction of field predicates; the empty filter matches everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataFilter {
    pub clauses: Vec<(String, Predicate)>,
}

impl MetadataFilter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn equals(mut self, field: impl Into<String>, value: impl Into<String>) -> Self {
        self.clauses
            .push((field.into(), Predicate::Equals(value.into())));
        self
    }

    pub fn contains_token(mut self, field: impl Into<String>, token: impl Into<String>) -> Self {
        self.clauses
            .push((field.into(), Predicate::ContainsToken(token.into())));
        self
    }

    pub fn matches(&self, metadata: &BTreeMap<String, String>) -> bool {
        self.clauses
            .iter()
            .all(|(field, pred)| metadata.get(field).is_some_and(|v| pred.matches(v)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub doc_id: String,
    pub score: f64,
}

/// Descending score, then ascending id.
pub fn rank_order(a: &RetrievalHit, b: &RetrievalHit) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dimension: usize,
    adapter_digest: String,
    entries: Vec<IndexEntry>,
    positions: HashMap<String, usize>,
}

impl VectorIndex {
    pub fn new(dimension: usize, adapter_digest: impl Into<String>) -> Self {
        Self {
            dimension,
            adapter_digest: adapter_digest.into(),
            entries: Vec::new(),
            positions: HashMap::new(),
        }
    }

    /// Embeds every document's passage text and indexes it.
    pub fn build(docs: &[KnowledgeDocument], encoder: &Encoder) -> Result<Self, IndexError> {
        let mut index = Self::new(encoder.dimension(), encoder.adapter_digest());
        index.reembed_incremental(docs, encoder)?;
        Ok(index)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn adapter_digest(&self) -> &str {
        &self.adapter_digest
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&IndexEntry> {
        self.positions.get(doc_id).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.positions.contains_key(doc_id)
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Inserts or replaces an entry. A replacement gets the previous version
    /// plus one; the previous version is returned.
    pub fn upsert(&mut self, mut entry: IndexEntry) -> Result<Option<u64>, IndexError> {
        if entry.vector.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                actual: entry.vector.dimension(),
            });
        }
        match self.positions.get(&entry.doc_id) {
            Some(&i) => {
                let prev = self.entries[i].version;
                entry.version = prev + 1;
                self.entries[i] = entry;
                Ok(Some(prev))
            }
            None => {
                entry.version = entry.version.max(1);
                self.positions
                    .insert(entry.doc_id.clone(), self.entries.len());
                self.entries.push(entry);
                Ok(None)
            }
        }
    }

    /// Exact top-k by cosine among entries passing `filter`, ties broken by
    /// ascending doc id. An empty index yields no hits.
    pub fn search_topk(
        &self,
        query: &Embedding,
        k: usize,
        filter: Option<&MetadataFilter>,
    ) -> Result<Vec<RetrievalHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if query.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                actual: query.dimension(),
            });
        }
        let q = query.values();
        let mut hits: Vec<RetrievalHit> = exec::map(&self.entries, |e| {
            if filter.is_some_and(|f| !f.matches(&e.metadata)) {
                return None;
            }
            let score = cosine_slices(q, e.vector.values()).expect("dimensions checked on insert");
            Some(RetrievalHit {
                doc_id: e.doc_id.clone(),
                score,
            })
        })
        .into_iter()
        .flatten()
        .collect();
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, rank_order);
            hits.truncate(k);
        }
        hits.sort_by(rank_order);
        Ok(hits)
    }

    /// Re-embeds only `changed` and upserts them. All vectors are computed
    /// before anything is written, so a provider failure leaves the index
    /// untouched.
    pub fn reembed_incremental(
        &mut self,
        changed: &[KnowledgeDocument],
        encoder: &Encoder,
    ) -> Result<usize, IndexError> {
        if changed.is_empty() {
            return Ok(0);
        }
        if encoder.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                actual: encoder.dimension(),
            });
        }
        let texts: Vec<String> = changed
            .iter()
            .map(KnowledgeDocument::passage_text)
            .collect();
        let vectors = encoder.embed_batch(&texts)?;
        for (doc, v) in changed.iter().zip(vectors) {
            self.upsert(IndexEntry::new(doc.id.clone(), v, document_metadata(doc)))?;
        }
        Ok(changed.len())
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<(), IndexError> {
        let bytes = self.to_snapshot_bytes();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes).map_err(|e| IndexError::Io(format!("{}: {e}", tmp.display())))?;
        fs::rename(&tmp, path).map_err(|e| IndexError::Io(format!("{}: {e}", path.display())))
    }

    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        put_str(&mut out, &self.adapter_digest);
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            put_str(&mut out, &e.doc_id);
            out.extend_from_slice(&e.version.to_le_bytes());
            out.push(u8::from(e.vector.is_normalized()));
            for v in e.vector.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&(e.metadata.len() as u32).to_le_bytes());
            for (k, v) in &e.metadata {
                put_str(&mut out, k);
                put_str(&mut out, v);
            }
        }
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        out
    }

    /// Loads a snapshot. When `expected_digest` is given and differs from the
    /// digest recorded in the header, the index still loads and a
    /// [`SnapshotWarning::DigestMismatch`] is returned alongside it.
    pub fn load_snapshot(
        path: &Path,
        expected_digest: Option<&str>,
    ) -> Result<LoadedSnapshot, IndexError> {
        let bytes =
            fs::read(path).map_err(|e| IndexError::Io(format!("{}: {e}", path.display())))?;
        Self::from_snapshot_bytes(&bytes, expected_digest)
    }

    pub fn from_snapshot_bytes(
        bytes: &[u8],
        expected_digest: Option<&str>,
    ) -> Result<LoadedSnapshot, IndexError> {
        if bytes.len() < SNAPSHOT_MAGIC.len() + 32 {
            return Err(IndexError::CorruptSnapshot("file too short".into()));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(IndexError::CorruptSnapshot("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(SNAPSHOT_MAGIC.len())? != SNAPSHOT_MAGIC {
            return Err(IndexError::CorruptSnapshot("bad magic".into()));
        }
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(IndexError::CorruptSnapshot(format!(
                "unsupported version {version}"
            )));
        }
        let dimension = r.u32()? as usize;
        let digest = r.string()?;
        let count = r.u64()?;
        let mut index = VectorIndex::new(dimension, digest.clone());
        for _ in 0..count {
            let doc_id = r.string()?;
            let version = r.u64()?;
            let normalized = r.take(1)?[0] == 1;
            let values = (0..dimension)
                .map(|_| r.f64())
                .collect::<Result<Vec<_>, _>>()?;
            let meta_count = r.u32()?;
            let mut metadata = BTreeMap::new();
            for _ in 0..meta_count {
                let k = r.string()?;
                let v = r.string()?;
                metadata.insert(k, v);
            }
            if index.contains(&doc_id) {
                return Err(IndexError::CorruptSnapshot(format!(
                    "duplicate id {doc_id}"
                )));
            }
            index.positions.insert(doc_id.clone(), index.entries.len());
            index.entries.push(IndexEntry {
                doc_id,
                vector: Embedding::from_parts(values, normalized),
                metadata,
                version,
            });
        }
        if r.pos != body.len() {
            return Err(IndexError::CorruptSnapshot("trailing bytes".into()));
        }
        let warning =
            expected_digest
                .filter(|e| *e != digest)
                .map(|e| SnapshotWarning::DigestMismatch {
                    snapshot: digest,
                    configured: e.to_string(),
                });
        Ok(LoadedSnapshot { index, warning })
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"HRIXSNAP";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SnapshotWarning {
    /// The snapshot was built under a different adapter than the one configured.
    DigestMismatch {
        snapshot: String,
        configured: String,
    },
}

#[derive(Debug, Clone)]
pub struct LoadedSnapshot {
    pub index: VectorIndex,
    pub warning: Option<SnapshotWarning>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| IndexError::CorruptSnapshot("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, IndexError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String, IndexError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| IndexError::CorruptSnapshot("invalid UTF-8".into()))
    }
}

/// Index shared between many readers and one writer. Writers work on a
/// private copy and publish it in one swap, so readers see either the old
/// or the new state, never a partial batch.
#[derive(Debug, Clone)]
pub struct SharedIndex {
    inner: Arc<RwLock<Arc<VectorIndex>>>,
}

impl SharedIndex {
    pub fn new(index: VectorIndex) -> Self {
        Self {
            inner: Arc::new(RwLock::new(Arc::new(index))),
        }
    }

    /// Current published state.
    pub fn snapshot(&self) -> Arc<VectorIndex> {
        self.inner.read().expect("index lock poisoned").clone()
    }

    /// Applies `f` to a copy and publishes it only if `f` succeeds.
    pub fn update<T, E>(&self, f: impl FnOnce(&mut VectorIndex) -> Result<T, E>) -> Result<T, E> {
        let mut guard = self.inner.write().expect("index lock poisoned");
        let mut next = (**guard).clone();
        let out = f(&mut next)?;
        *guard = Arc::new(next);
        Ok(out)
    }

    pub fn reembed_incremental(
        &self,
        changed: &[KnowledgeDocument],
        encoder: &Encoder,
    ) -> Result<usize, IndexError> {
        if changed.is_empty() {
            return Ok(0);
        }
        self.update(|idx| idx.reembed_incremental(changed, encoder))
    }
}
