//! Knowledge-base documents, triplet records and checkpointed ingestion.
//!
//! Corpus files are UTF-8 JSON holding either an array of document objects,
//! a single object, or one object per line. Fields outside the document
//! schema are kept in [`KnowledgeDocument::metadata`] and written back out
//! unchanged.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use tracing::{debug, info, warn};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DocumentError {
    #[error("missing required field `{0}`")]
    MissingField(String),
    #[error("required field `{0}` is empty")]
    EmptyRequired(String),
    #[error("field `{field}` must be {expected}")]
    WrongType {
        field: String,
        expected: &'static str,
    },
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    MalformedSyntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("document must be a JSON object")]
    NotAnObject,
}

/// One retrieval unit of the knowledge base.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnowledgeDocument {
    pub id: String,
    pub title: String,
    pub requirements: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sequences: Option<Vec<String>>,
    pub category: String,
    /// Fields outside the schema (signal counts, module ids, ...).
    #[serde(flatten)]
    pub metadata: BTreeMap<String, Value>,
}

const KNOWN_FIELDS: [&str; 6] = [
    "id",
    "title",
    "requirements",
    "description",
    "sequences",
    "category",
];

fn take_string(obj: &mut Map<String, Value>, field: &str) -> Result<Option<String>, DocumentError> {
    match obj.remove(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(DocumentError::WrongType {
            field: field.to_string(),
            expected: "a string",
        }),
    }
}

fn required_string(obj: &mut Map<String, Value>, field: &str) -> Result<String, DocumentError> {
    take_string(obj, field)?.ok_or_else(|| DocumentError::MissingField(field.to_string()))
}

impl KnowledgeDocument {
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        requirements: impl Into<String>,
        category: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            requirements: requirements.into(),
            description: None,
            sequences: None,
            category: category.into(),
            metadata: BTreeMap::new(),
        }
    }

    /// Maps a parsed JSON value onto the schema.
    pub fn from_value(value: Value) -> Result<Self, DocumentError> {
        let Value::Object(mut obj) = value else {
            return Err(DocumentError::NotAnObject);
        };
        let id = required_string(&mut obj, "id")?;
        let title = required_string(&mut obj, "title")?;
        let requirements = required_string(&mut obj, "requirements")?;
        let category = required_string(&mut obj, "category")?;
        let description = take_string(&mut obj, "description")?;
        let sequences = match obj.remove("sequences") {
            None | Some(Value::Null) => None,
            Some(Value::Array(items)) => Some(
                items
                    .into_iter()
                    .map(|v| match v {
                        Value::String(s) => Ok(s),
                        _ => Err(DocumentError::WrongType {
                            field: "sequences".into(),
                            expected: "an array of strings",
                        }),
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            Some(_) => {
                return Err(DocumentError::WrongType {
                    field: "sequences".into(),
                    expected: "an array of strings",
                })
            }
        };
        let doc = Self {
            id,
            title,
            requirements,
            description,
            sequences,
            category,
            metadata: obj.into_iter().collect(),
        };
        doc.check()?;
        Ok(doc)
    }

    /// Checks the per-document invariants.
    pub fn check(&self) -> Result<(), DocumentError> {
        if self.id.trim().is_empty() {
            return Err(DocumentError::EmptyRequired("id".into()));
        }
        if self.requirements.trim().is_empty() {
            return Err(DocumentError::EmptyRequired("requirements".into()));
        }
        if let Some(steps) = &self.sequences {
            if steps.iter().any(|s| s.trim().is_empty()) {
                return Err(DocumentError::EmptyRequired("sequences".into()));
            }
        }
        if let Some(key) = self
            .metadata
            .keys()
            .find(|k| KNOWN_FIELDS.contains(&k.as_str()))
        {
            return Err(DocumentError::WrongType {
                field: key.clone(),
                expected: "a schema field, not metadata",
            });
        }
        Ok(())
    }

    /// Canonical single-line JSON form (metadata keys sorted).
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("documents serialize")
    }

    /// Text that gets embedded: title followed by [`Self::body_text`].
    pub fn passage_text(&self) -> String {
        format!("{}: {}", self.title, self.body_text())
    }

    /// Requirements, description and numbered sequence steps.
    pub fn body_text(&self) -> String {
        let mut out = self.requirements.clone();
        if let Some(d) = &self.description {
            out.push('\n');
            out.push_str(d);
        }
        if let Some(steps) = &self.sequences {
            for (i, s) in steps.iter().enumerate() {
                out.push_str(&format!("\n{}. {}", i + 1, s));
            }
        }
        out
    }

    /// Metadata value flattened to a string: strings verbatim, arrays joined
    /// by a single space, other scalars by their JSON rendering.
    pub fn metadata_string(&self, key: &str) -> Option<String> {
        self.metadata.get(key).map(value_to_flat_string)
    }

    /// Set of values a metadata field holds (arrays expand to elements).
    pub fn metadata_values(&self, key: &str) -> BTreeSet<String> {
        match self.metadata.get(key) {
            None | Some(Value::Null) => BTreeSet::new(),
            Some(Value::Array(items)) => items.iter().map(value_to_flat_string).collect(),
            Some(v) => std::iter::once(value_to_flat_string(v)).collect(),
        }
    }
}

pub(crate) fn value_to_flat_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items
            .iter()
            .map(value_to_flat_string)
            .collect::<Vec<_>>()
            .join(" "),
        other => other.to_string(),
    }
}

impl<'de> Deserialize<'de> for KnowledgeDocument {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(d)?;
        Self::from_value(value).map_err(serde::de::Error::custom)
    }
}

/// Parses the text of one JSON object into a document.
pub fn parse_document(raw: &str) -> Result<KnowledgeDocument, DocumentError> {
    let value: Value = serde_json::from_str(raw).map_err(|e| DocumentError::MalformedSyntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    KnowledgeDocument::from_value(value)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// `file#record` or `file:line`, or `#index` for in-memory input.
    pub locator: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub total: usize,
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
}

impl ValidationReport {
    fn reject(&mut self, locator: String, reason: impl fmt::Display) {
        self.total += 1;
        self.rejected.push(Rejection {
            locator,
            reason: reason.to_string(),
        });
    }

    fn accept(&mut self) {
        self.total += 1;
        self.accepted += 1;
    }

    pub fn is_consistent(&self) -> bool {
        self.accepted + self.rejected.len() == self.total
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.total += other.total;
        self.accepted += other.accepted;
        self.rejected.extend(other.rejected);
    }
}

/// Rejects duplicate ids (first occurrence wins) and documents violating the
/// per-document invariants. Returns the accepted documents in input order.
pub fn validate_corpus(
    docs: impl IntoIterator<Item = KnowledgeDocument>,
) -> (Vec<KnowledgeDocument>, ValidationReport) {
    let mut report = ValidationReport::default();
    let mut seen = HashSet::new();
    let mut accepted = Vec::new();
    for (i, doc) in docs.into_iter().enumerate() {
        let locator = format!("#{i}:{}", doc.id);
        if let Err(e) = doc.check() {
            report.reject(locator, e);
        } else if !seen.insert(doc.id.clone()) {
            report.reject(locator, "DuplicateId");
        } else {
            report.accept();
            accepted.push(doc);
        }
    }
    (accepted, report)
}

/// Splits the text of one corpus file into raw records, each tagged with a
/// locator suffix. Arrays and single (possibly pretty-printed) objects use
/// `#n`; line-delimited files use `:line`.
fn split_records(content: &str) -> Vec<(String, Result<Value, DocumentError>)> {
    let trimmed = content.trim_start();
    if trimmed.is_empty() {
        return Vec::new();
    }
    let syntax = |e: serde_json::Error| DocumentError::MalformedSyntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    };
    if trimmed.starts_with('[') {
        return match serde_json::from_str::<Value>(content) {
            Ok(Value::Array(items)) => items
                .into_iter()
                .enumerate()
                .map(|(i, v)| (format!("#{}", i + 1), Ok(v)))
                .collect(),
            Ok(_) => vec![("#1".into(), Err(DocumentError::NotAnObject))],
            Err(e) => vec![("#1".into(), Err(syntax(e)))],
        };
    }
    if let Ok(v) = serde_json::from_str::<Value>(content) {
        return vec![("#1".into(), Ok(v))];
    }
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            (
                format!(":{}", n + 1),
                serde_json::from_str(l).map_err(syntax),
            )
        })
        .collect()
}

/// Parses every record of a corpus file's text. Per-record failures come
/// back as `Err` next to their locator.
pub fn parse_corpus_text(content: &str) -> Vec<(String, Result<KnowledgeDocument, DocumentError>)> {
    split_records(content)
        .into_iter()
        .map(|(loc, v)| (loc, v.and_then(KnowledgeDocument::from_value)))
        .collect()
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path} is corrupt ({reason}); rerun with an explicit reset to start over")]
    CorruptCheckpoint { path: PathBuf, reason: String },
    #[error("ingestion interrupted by injected fault {0:?}")]
    Interrupted(FaultPoint),
    #[error("{path}: {source}")]
    Document {
        path: PathBuf,
        #[source]
        source: DocumentError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads every document of a corpus file or directory, without checkpointing.
/// Any malformed record is an error; duplicates are rejected first-wins.
pub fn load_corpus(path: &Path) -> Result<(Vec<KnowledgeDocument>, ValidationReport), CorpusError> {
    let files = if path.is_dir() {
        list_corpus_files(path, &[])?
    } else {
        vec![path.to_path_buf()]
    };
    let mut docs = Vec::new();
    for file in files {
        let content = fs::read_to_string(&file).map_err(io_err(&file))?;
        for (_, parsed) in parse_corpus_text(&content) {
            docs.push(parsed.map_err(|source| CorpusError::Document {
                path: file.clone(),
                source,
            })?);
        }
    }
    Ok(validate_corpus(docs))
}

/// Writes documents in canonical line-delimited form.
pub fn write_corpus(path: &Path, docs: &[KnowledgeDocument]) -> Result<(), CorpusError> {
    let mut out = String::new();
    for d in docs {
        out.push_str(&d.to_canonical_json());
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Checkpointed ingestion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestCheckpoint {
    pub version: u32,
    pub source_path: PathBuf,
    /// Source files (relative to `source_path`) fully committed.
    pub processed_files: Vec<String>,
    pub processed_ids: BTreeSet<String>,
    /// Length of the output store covered by this checkpoint.
    pub last_offset: u64,
    pub timestamp: DateTime<Utc>,
}

impl IngestCheckpoint {
    fn fresh(source: &Path) -> Self {
        Self {
            version: 1,
            source_path: source.to_path_buf(),
            processed_files: Vec::new(),
            processed_ids: BTreeSet::new(),
            last_offset: 0,
            timestamp: Utc::now(),
        }
    }

    pub fn load(path: &Path) -> Result<Option<Self>, CorpusError> {
        let raw = match fs::read(path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(path)(e)),
        };
        serde_json::from_slice(&raw)
            .map(Some)
            .map_err(|e| CorpusError::CorruptCheckpoint {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
    }

    /// Write-then-rename so readers never see a half-written checkpoint.
    fn store(&self, path: &Path) -> Result<(), CorpusError> {
        let tmp = path.with_extension("tmp");
        let body = serde_json::to_vec_pretty(self).expect("checkpoint serializes");
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(&body).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))
    }
}

/// Where an injected fault stops an ingestion run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultStage {
    /// Half of the file's output bytes written, nothing synced or committed.
    MidAppend,
    /// Output appended and synced, checkpoint not yet written.
    AfterAppend,
    /// File fully committed.
    AfterCheckpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultPoint {
    /// Index of the pending source file (in processing order) to fail on.
    pub file_index: usize,
    pub stage: FaultStage,
}

/// Checkpointed, resumable ingestion of a directory of corpus files into a
/// canonical line-delimited store.
#[derive(Debug, Clone)]
pub struct Ingestor {
    root: PathBuf,
    checkpoint: PathBuf,
    output: PathBuf,
    reset: bool,
    fault: Option<FaultPoint>,
}

impl Ingestor {
    pub fn new(
        root: impl Into<PathBuf>,
        checkpoint: impl Into<PathBuf>,
        output: impl Into<PathBuf>,
    ) -> Self {
        Self {
            root: root.into(),
            checkpoint: checkpoint.into(),
            output: output.into(),
            reset: false,
            fault: None,
        }
    }

    /// Discard any existing checkpoint and output before running.
    pub fn reset(mut self, reset: bool) -> Self {
        self.reset = reset;
        self
    }

    /// Test hook: abort the run at the given point, as a crash would.
    pub fn inject_fault(mut self, fault: Option<FaultPoint>) -> Self {
        self.fault = fault;
        self
    }

    fn fault_at(&self, file_index: usize, stage: FaultStage) -> Result<(), CorpusError> {
        match self.fault {
            Some(f) if f.file_index == file_index && f.stage == stage => {
                Err(CorpusError::Interrupted(f))
            }
            _ => Ok(()),
        }
    }

    pub fn run(&self) -> Result<ValidationReport, CorpusError> {
        if self.reset {
            for p in [&self.checkpoint, &self.output] {
                match fs::remove_file(p) {
                    Ok(()) => {}
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                    Err(e) => return Err(io_err(p)(e)),
                }
            }
        }
        let mut ckpt = match IngestCheckpoint::load(&self.checkpoint)? {
            Some(c) => {
                if c.source_path != self.root {
                    return Err(CorpusError::CorruptCheckpoint {
                        path: self.checkpoint.clone(),
                        reason: format!(
                            "checkpoint belongs to {}, not {}",
                            c.source_path.display(),
                            self.root.display()
                        ),
                    });
                }
                c
            }
            None => IngestCheckpoint::fresh(&self.root),
        };

        let mut out = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.output)
            .map_err(io_err(&self.output))?;
        let len = out.metadata().map_err(io_err(&self.output))?.len();
        if len < ckpt.last_offset {
            return Err(CorpusError::CorruptCheckpoint {
                path: self.checkpoint.clone(),
                reason: format!(
                    "output holds {len} bytes, checkpoint claims {}",
                    ckpt.last_offset
                ),
            });
        }
        if len > ckpt.last_offset {
            warn!(
                output = %self.output.display(),
                dropped = len - ckpt.last_offset,
                "discarding uncommitted output tail"
            );
            out.set_len(ckpt.last_offset)
                .map_err(io_err(&self.output))?;
        }

        let skip = [
            self.checkpoint.clone(),
            self.output.clone(),
            self.checkpoint.with_extension("tmp"),
        ];
        let files = list_corpus_files(&self.root, &skip)?;
        let done: HashSet<String> = ckpt.processed_files.iter().cloned().collect();
        let pending: Vec<(String, PathBuf)> = files
            .into_iter()
            .map(|p| (relative_name(&self.root, &p), p))
            .filter(|(rel, _)| !done.contains(rel))
            .collect();

        let mut report = ValidationReport::default();
        for (i, (rel, path)) in pending.iter().enumerate() {
            let content = fs::read_to_string(path).map_err(io_err(path))?;
            let mut file_ids = Vec::new();
            let mut bytes = Vec::new();
            for (suffix, parsed) in parse_corpus_text(&content) {
                let locator = format!("{rel}{suffix}");
                match parsed {
                    Err(e) => report.reject(locator, e),
                    Ok(doc) => {
                        if ckpt.processed_ids.contains(&doc.id) || file_ids.contains(&doc.id) {
                            report.reject(locator, "DuplicateId");
                        } else {
                            bytes.extend_from_slice(doc.to_canonical_json().as_bytes());
                            bytes.push(b'\n');
                            file_ids.push(doc.id);
                            report.accept();
                        }
                    }
                }
            }

            if matches!(self.fault, Some(f) if f.file_index == i && f.stage == FaultStage::MidAppend)
            {
                out.write_all(&bytes[..bytes.len() / 2])
                    .map_err(io_err(&self.output))?;
                self.fault_at(i, FaultStage::MidAppend)?;
            }
            out.write_all(&bytes).map_err(io_err(&self.output))?;
            out.sync_data().map_err(io_err(&self.output))?;
            self.fault_at(i, FaultStage::AfterAppend)?;

            ckpt.last_offset += bytes.len() as u64;
            ckpt.processed_files.push(rel.clone());
            ckpt.processed_ids.extend(file_ids);
            ckpt.timestamp = Utc::now();
            ckpt.store(&self.checkpoint)?;
            debug!(file = %rel, offset = ckpt.last_offset, "checkpoint committed");
            self.fault_at(i, FaultStage::AfterCheckpoint)?;
        }
        if pending.is_empty() {
            // still record a checkpoint so a later run sees a consistent state
            ckpt.store(&self.checkpoint)?;
        }
        info!(
            root = %self.root.display(),
            files = pending.len(),
            accepted = report.accepted,
            rejected = report.rejected.len(),
            "ingestion finished"
        );
        Ok(report)
    }
}

/// Convenience wrapper: ingest `root` into `output`, checkpointing to `checkpoint`.
pub fn ingest_directory(
    root: &Path,
    checkpoint: &Path,
    output: &Path,
) -> Result<ValidationReport, CorpusError> {
    Ingestor::new(root, checkpoint, output).run()
}

fn relative_name(root: &Path, p: &Path) -> String {
    p.strip_prefix(root)
        .unwrap_or(p)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// `.json` / `.jsonl` files under `root`, sorted by relative path.
fn list_corpus_files(root: &Path, skip: &[PathBuf]) -> Result<Vec<PathBuf>, CorpusError> {
    let skip: Vec<PathBuf> = skip
        .iter()
        .map(|p| fs::canonicalize(p).unwrap_or_else(|_| p.clone()))
        .collect();
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
            if !matches!(ext, "json" | "jsonl") {
                continue;
            }
            let canon = fs::canonicalize(&path).unwrap_or_else(|_| path.clone());
            if skip.contains(&canon) {
                continue;
            }
            out.push(path);
        }
    }
    out.sort_by_key(|p| relative_name(root, p));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Triplets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Heuristic,
    HardNegative,
    Synthetic,
    #[default]
    Manual,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TripletError {
    #[error("anchor is empty")]
    EmptyAnchor,
    #[error("positive is empty")]
    EmptyPositive,
    #[error("anchor and positive are identical")]
    AnchorEqualsPositive,
    #[error("negative is identical to positive")]
    NegativeEqualsPositive,
}

/// Anchor / positive / optional negative training or benchmark item.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TripletRecord {
    pub anchor: String,
    pub positive: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative: Option<String>,
    #[serde(default)]
    pub provenance: Provenance,
    #[serde(default)]
    pub source_ids: Vec<String>,
}

impl TripletRecord {
    pub fn new(
        anchor: impl Into<String>,
        positive: impl Into<String>,
        negative: Option<String>,
        provenance: Provenance,
        source_ids: Vec<String>,
    ) -> Result<Self, TripletError> {
        let t = Self {
            anchor: anchor.into(),
            positive: positive.into(),
            negative,
            provenance,
            source_ids,
        };
        t.check()?;
        Ok(t)
    }

    pub fn check(&self) -> Result<(), TripletError> {
        if self.anchor.is_empty() {
            return Err(TripletError::EmptyAnchor);
        }
        if self.positive.is_empty() {
            return Err(TripletError::EmptyPositive);
        }
        if self.anchor == self.positive {
            return Err(TripletError::AnchorEqualsPositive);
        }
        if self.negative.as_deref() == Some(self.positive.as_str()) {
            return Err(TripletError::NegativeEqualsPositive);
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TripletFileError {
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
}

/// Reads a line-delimited triplet file, preserving order. Blank lines are
/// skipped; an empty file yields an empty vector.
pub fn load_triplets(path: &Path) -> Result<Vec<TripletRecord>, TripletFileError> {
    let io = |source| TripletFileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| TripletFileError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| TripletFileError::MalformedLine {
            line: n + 1,
            reason,
        };
        let record: TripletRecord =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        record.check().map_err(|e| malformed(e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

pub fn save_triplets(path: &Path, triplets: &[TripletRecord]) -> Result<(), TripletFileError> {
    let mut out = String::new();
    for t in triplets {
        out.push_str(&serde_json::to_string(t).expect("triplets serialize"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| TripletFileError::Io {
        path: path.to_path_buf(),
        source,
    })
}
