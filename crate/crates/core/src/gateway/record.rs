//! Append-only record store.
//!
//! Layout under the store root:
//!
//! ```text
//! index.jsonl                              {dataset, model, config_digest, file}
//! <dataset>/<model>/<config_digest>.jsonl  one Record per line
//! ```
//!
//! Appends are serialized through a mutex and flushed with `sync_data` before
//! returning. Duplicate keys keep the first record.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Samples,
    CandidateLogprobs,
    PTrue,
    Judge,
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordKind::Samples => "samples",
            RecordKind::CandidateLogprobs => "candidate_logprobs",
            RecordKind::PTrue => "p_true",
            RecordKind::Judge => "judge",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub item_id: String,
    pub prompt_sha256: String,
    pub config_digest: String,
    pub kind: RecordKind,
    pub payload: Value,
    pub created_at_unix_ms: u64,
}

/// Payload fields other than `value` that distinguish records sharing a
/// prompt (for candidate logprobs: the candidate hash and weight channel).
pub fn lookup_key(
    kind: RecordKind,
    item_id: &str,
    prompt_sha256: &str,
    config_digest: &str,
    discriminator: &Map<String, Value>,
) -> String {
    let mut parts: Vec<String> = discriminator
        .iter()
        .filter(|(k, _)| k.as_str() != "value")
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    parts.sort();
    format!(
        "{kind}\u{1f}{item_id}\u{1f}{prompt_sha256}\u{1f}{config_digest}\u{1f}{}",
        parts.join(",")
    )
}

fn record_key(rec: &Record) -> String {
    let empty = Map::new();
    let disc = rec.payload.as_object().unwrap_or(&empty);
    lookup_key(
        rec.kind,
        &rec.item_id,
        &rec.prompt_sha256,
        &rec.config_digest,
        disc,
    )
}

#[derive(Serialize, Deserialize, PartialEq)]
struct IndexEntry {
    dataset: String,
    model: String,
    config_digest: String,
    file: String,
}

fn sanitize(component: &str) -> String {
    component
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Debug)]
pub struct RecordStore {
    path: PathBuf,
    records: Mutex<HashMap<String, Value>>,
    writer: Option<Mutex<File>>,
}

impl RecordStore {
    /// Open the store file for `(dataset, model, config_digest)` under `root`.
    /// Read-only stores never create files; a missing file is an empty store.
    pub fn open(
        root: &Path,
        dataset: &str,
        model: &str,
        config_digest: &str,
        read_only: bool,
    ) -> std::io::Result<Self> {
        let rel = PathBuf::from(sanitize(dataset))
            .join(sanitize(model))
            .join(format!("{}.jsonl", sanitize(config_digest)));
        let path = root.join(&rel);
        let mut records = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: Record = serde_json::from_str(&line).map_err(|e| {
                    std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("{}:{}: {e}", path.display(), i + 1),
                    )
                })?;
                records.entry(record_key(&rec)).or_insert(rec.payload);
            }
        }
        let writer = if read_only {
            None
        } else {
            fs::create_dir_all(path.parent().expect("store path has a parent"))?;
            let existed = path.exists();
            let file = OpenOptions::new().create(true).append(true).open(&path)?;
            if !existed {
                Self::register(root, dataset, model, config_digest, &rel)?;
            }
            Some(Mutex::new(file))
        };
        Ok(Self {
            path,
            records: Mutex::new(records),
            writer,
        })
    }

    fn register(
        root: &Path,
        dataset: &str,
        model: &str,
        config_digest: &str,
        rel: &Path,
    ) -> std::io::Result<()> {
        let entry = IndexEntry {
            dataset: dataset.to_string(),
            model: model.to_string(),
            config_digest: config_digest.to_string(),
            file: rel.to_string_lossy().replace('\\', "/"),
        };
        let index = root.join("index.jsonl");
        if index.exists() {
            let content = fs::read_to_string(&index)?;
            let known = content
                .lines()
                .filter_map(|l| serde_json::from_str::<IndexEntry>(l).ok())
                .any(|e| e == entry);
            if known {
                return Ok(());
            }
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&index)?;
        writeln!(f, "{}", serde_json::to_string(&entry).expect("index entry serializes"))?;
        f.sync_data()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        self.records.lock().expect("store lock").get(key).cloned()
    }

    pub fn append(&self, rec: &Record) -> std::io::Result<()> {
        let Some(writer) = &self.writer else {
            return Err(std::io::Error::new(
                std::io::ErrorKind::PermissionDenied,
                "record store is read-only",
            ));
        };
        let line = serde_json::to_string(rec).map_err(std::io::Error::other)?;
        {
            let mut file = writer.lock().expect("writer lock");
            writeln!(file, "{line}")?;
            file.sync_data()?;
        }
        self.records
            .lock()
            .expect("store lock")
            .entry(record_key(rec))
            .or_insert_with(|| rec.payload.clone());
        Ok(())
    }
}
