//! Append-only line-delimited JSON journals.
//!
//! Each journal is a pair of files: `<name>.jsonl` receives appends and
//! `<name>.snapshot.jsonl` holds compacted history. Loading reads the
//! snapshot, then the journal, keeping the first record per key. A torn final
//! line (no trailing newline, from a crash mid-append) is cut off; any other unreadable line is an error.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("record key {0} already present")]
    DuplicateKey(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> JournalError + '_ {
    move |source| JournalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub trait JournalRecord: Serialize + DeserializeOwned + Send + Sync + 'static {
    fn key(&self) -> &str;
}

/// Storage interface for append-only records. [`Journal`] is the file-backed
/// implementation.
pub trait RecordStore<T>: Send + Sync {
    fn append(&self, record: T) -> Result<Arc<T>, JournalError>;
    fn get(&self, key: &str) -> Option<Arc<T>>;
    fn all(&self) -> Vec<Arc<T>>;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct JournalOptions {
    /// `fsync` after every append.
    pub durable: bool,
    /// Compact after this many appends; `None` disables automatic compaction.
    pub compact_every: Option<usize>,
}

impl Default for JournalOptions {
    fn default() -> Self {
        Self {
            durable: true,
            compact_every: Some(10_000),
        }
    }
}

struct Writer {
    file: File,
    since_compact: usize,
}

struct Loaded<T> {
    records: Vec<Arc<T>>,
    positions: HashMap<String, usize>,
}

pub struct Journal<T> {
    path: PathBuf,
    snapshot_path: PathBuf,
    options: JournalOptions,
    writer: Mutex<Writer>,
    state: RwLock<Loaded<T>>,
}

impl<T> std::fmt::Debug for Journal<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Journal")
            .field("path", &self.path)
            .finish_non_exhaustive()
    }
}

pub fn snapshot_path_for(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("journal");
    path.with_file_name(format!("{stem}.snapshot.jsonl"))
}

/// Reads records from `path`. Returns the records and the byte length of the
/// valid prefix.
fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, u64), JournalError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut offset = 0u64;
    let mut line = String::new();
    let mut number = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        number += 1;
        if !line.ends_with('\n') {
            tracing::warn!(path = %path.display(), line = number, "dropping torn final journal line");
            break;
        }
        if !line.trim().is_empty() {
            let record =
                serde_json::from_str::<T>(line.trim_end()).map_err(|e| JournalError::Corrupt {
                    path: path.to_path_buf(),
                    line: number,
                    reason: e.to_string(),
                })?;
            out.push(record);
        }
        offset += n as u64;
    }
    Ok((out, offset))
}

impl<T: JournalRecord> Journal<T> {
    pub fn open(path: impl Into<PathBuf>, options: JournalOptions) -> Result<Self, JournalError> {
        let path = path.into();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let snapshot_path = snapshot_path_for(&path);
        let (snap, _) = read_lines::<T>(&snapshot_path)?;
        let (tail, valid_len) = read_lines::<T>(&path)?;

        let mut state = Loaded {
            records: Vec::new(),
            positions: HashMap::new(),
        };
        for r in snap.into_iter().chain(tail) {
            if !state.positions.contains_key(r.key()) {
                state
                    .positions
                    .insert(r.key().to_string(), state.records.len());
                state.records.push(Arc::new(r));
            }
        }

        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .truncate(false)
            .open(&path)
            .map_err(io_err(&path))?;
        file.set_len(valid_len).map_err(io_err(&path))?;
        file.seek(SeekFrom::End(0)).map_err(io_err(&path))?;
        Ok(Self {
            path,
            snapshot_path,
            options,
            writer: Mutex::new(Writer {
                file,
                since_compact: 0,
            }),
            state: RwLock::new(state),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Rewrites the snapshot with every record and empties the journal.
    pub fn compact(&self) -> Result<(), JournalError> {
        let mut writer = self.writer.lock().expect("journal writer poisoned");
        self.compact_locked(&mut writer)
    }

    fn compact_locked(&self, writer: &mut Writer) -> Result<(), JournalError> {
        let records = self.all();
        let tmp = self.snapshot_path.with_extension("jsonl.tmp");
        {
            let mut out = File::create(&tmp).map_err(io_err(&tmp))?;
            for r in &records {
                let mut line = serde_json::to_vec(r.as_ref()).expect("record serializes");
                line.push(b'\n');
                out.write_all(&line).map_err(io_err(&tmp))?;
            }
            out.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &self.snapshot_path).map_err(io_err(&self.snapshot_path))?;
        writer.file.set_len(0).map_err(io_err(&self.path))?;
        writer
            .file
            .seek(SeekFrom::Start(0))
            .map_err(io_err(&self.path))?;
        if self.options.durable {
            writer.file.sync_all().map_err(io_err(&self.path))?;
        }
        writer.since_compact = 0;
        tracing::info!(path = %self.path.display(), records = records.len(), "journal compacted");
        Ok(())
    }
}

impl<T: JournalRecord> RecordStore<T> for Journal<T> {
    /// Persists `record` (write + flush, and fsync when durable) before it
    /// becomes visible to readers.
    fn append(&self, record: T) -> Result<Arc<T>, JournalError> {
        let mut writer = self.writer.lock().expect("journal writer poisoned");
        if self.get(record.key()).is_some() {
            return Err(JournalError::DuplicateKey(record.key().to_string()));
        }
        let mut line = serde_json::to_vec(&record).expect("record serializes");
        line.push(b'\n');
        writer.file.write_all(&line).map_err(io_err(&self.path))?;
        writer.file.flush().map_err(io_err(&self.path))?;
        if self.options.durable {
            writer.file.sync_data().map_err(io_err(&self.path))?;
        }
        let record = Arc::new(record);
        {
            let mut state = self.state.write().expect("journal state poisoned");
            let position = state.records.len();
            state.positions.insert(record.key().to_string(), position);
            state.records.push(Arc::clone(&record));
        }
        writer.since_compact += 1;
        if self
            .options
            .compact_every
            .is_some_and(|n| writer.since_compact >= n)
        {
            self.compact_locked(&mut writer)?;
        }
        Ok(record)
    }

    fn get(&self, key: &str) -> Option<Arc<T>> {
        let state = self.state.read().expect("journal state poisoned");
        state
            .positions
            .get(key)
            .map(|&i| Arc::clone(&state.records[i]))
    }

    fn all(&self) -> Vec<Arc<T>> {
        self.state
            .read()
            .expect("journal state poisoned")
            .records
            .clone()
    }

    fn len(&self) -> usize {
        self.state
            .read()
            .expect("journal state poisoned")
            .records
            .len()
    }
}
