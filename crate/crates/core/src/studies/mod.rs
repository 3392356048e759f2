//! Pipeline orchestration, reports and the sensitivity studies.

pub mod config;
pub mod noise;
pub mod pipeline;
pub mod report;
pub mod sweep;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::methods::Method;
use crate::metrics::{EvalMode, Origin};

pub use config::RunConfig;
pub use noise::{kendall_tau, noise_study, NoiseReport, NoiseStudyConfig};
pub use pipeline::{collect, run_pipeline, run_with_gateways};
pub use report::{evaluate, MetricReport};
pub use sweep::{threshold_sweep, RankingTable};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("{failed} of {total} items failed (limit {limit_percent}%)")]
    PartialFailure {
        failed: usize,
        total: usize,
        limit_percent: f64,
    },
    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl StudyError {
    pub fn exit_code(&self) -> i32 {
        match self {
            StudyError::Config(_) => 2,
            StudyError::PartialFailure { .. } => 3,
            StudyError::Capability(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T, E = StudyError> = std::result::Result<T, E>;

pub(crate) fn other(e: impl std::fmt::Display) -> StudyError {
    StudyError::Other(e.to_string())
}

/// One line of `scores.jsonl`. In baseline mode `option_index` is the index
/// of the sampled response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub item_id: String,
    pub option_index: usize,
    pub method: Method,
    pub confidence: f64,
}

/// Correctness of one scored unit: a gold or judge label, or the continuous
/// similarity to the reference that a threshold turns into a label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitLabel {
    pub item_id: String,
    pub option_index: usize,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correctness: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuous: Option<f64>,
}

/// A unit (or a whole item, when `option_index` is absent) left out of one
/// method (or all methods, when `method` is absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedItem {
    pub item_id: String,
    pub error: String,
}

/// Everything scoring produces; written as `scores.jsonl` plus
/// `units.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ScoreSet {
    pub mode: EvalMode,
    pub item_ids: Vec<String>,
    #[serde(skip)]
    pub scores: Vec<ScoreRow>,
    pub labels: Vec<UnitLabel>,
    pub exclusions: Vec<Exclusion>,
    pub failed_items: Vec<FailedItem>,
    /// Methods that could not run at all, with the first reason seen.
    pub unavailable: BTreeMap<Method, String>,
    /// Weight channel identifiers reported by the backend.
    pub channels: BTreeMap<Method, String>,
    /// How often each P(true) mode was used.
    pub p_true_modes: BTreeMap<String, usize>,
}

pub const SCORES_FILE: &str = "scores.jsonl";
pub const UNITS_FILE: &str = "units.json";

impl ScoreSet {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut out = String::new();
        for row in &self.scores {
            out.push_str(&serde_json::to_string(row).map_err(other)?);
            out.push('\n');
        }
        fs::write(dir.join(SCORES_FILE), out)?;
        let meta = serde_json::to_value(self).map_err(other)?;
        fs::write(
            dir.join(UNITS_FILE),
            serde_json::to_string_pretty(&meta).map_err(other)? + "\n",
        )?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let meta = fs::read_to_string(dir.join(UNITS_FILE))?;
        let mut set: ScoreSet = serde_json::from_str(&meta).map_err(other)?;
        let reader = BufReader::new(File::open(dir.join(SCORES_FILE))?);
        for line in reader.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                set.scores.push(serde_json::from_str(&line).map_err(other)?);
            }
        }
        Ok(set)
    }
}

/// A scored unit for the sensitivity studies: continuous correctness and the
/// confidence each method assigned to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyUnit {
    pub id: String,
    pub correctness: f64,
    pub confidences: BTreeMap<Method, f64>,
}

impl StudyUnit {
    /// Units from a baseline score set that carry continuous correctness.
    pub fn from_score_set(set: &ScoreSet) -> Vec<StudyUnit> {
        let excluded_all: std::collections::HashSet<(String, usize)> = set
            .exclusions
            .iter()
            .filter(|e| e.method.is_none())
            .filter_map(|e| e.option_index.map(|i| (e.item_id.clone(), i)))
            .collect();
        let mut units: Vec<StudyUnit> = Vec::new();
        let mut index = std::collections::HashMap::new();
        for l in &set.labels {
            let key = (l.item_id.clone(), l.option_index);
            let Some(c) = l.continuous else { continue };
            if excluded_all.contains(&key) {
                continue;
            }
            index.insert(key, units.len());
            units.push(StudyUnit {
                id: format!("{}#{}", l.item_id, l.option_index),
                correctness: c,
                confidences: BTreeMap::new(),
            });
        }
        for s in &set.scores {
            if let Some(&u) = index.get(&(s.item_id.clone(), s.option_index)) {
                units[u].confidences.insert(s.method, s.confidence);
            }
        }
        units
    }
}

pub fn read_study_units(path: &Path) -> Result<Vec<StudyUnit>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| StudyError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_study_units(units: &[StudyUnit], path: &Path) -> Result<()> {
    let mut out = String::new();
    for u in units {
        out.push_str(&serde_json::to_string(u).map_err(other)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Exclusive lock on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

pub const LOCK_FILE: &str = ".mcqa-eval.lock";

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(StudyError::Locked(dir.to_path_buf()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutputLock::acquire(dir.path()).unwrap();
        assert!(matches!(OutputLock::acquire(dir.path()), Err(StudyError::Locked(_))));
        drop(lock);
        OutputLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(StudyError::Config("x".into()).exit_code(), 2);
        assert_eq!(
            StudyError::PartialFailure {
                failed: 2,
                total: 10,
                limit_percent: 1.0
            }
            .exit_code(),
            3
        );
        assert_eq!(StudyError::Capability("x".into()).exit_code(), 4);
        assert_eq!(StudyError::Other("x".into()).exit_code(), 1);
    }

    #[test]
    fn score_set_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let set = ScoreSet {
            item_ids: vec!["a".into()],
            scores: vec![ScoreRow {
                item_id: "a".into(),
                option_index: 1,
                method: Method::Sl,
                confidence: -0.1 - 0.2,
            }],
            labels: vec![UnitLabel {
                item_id: "a".into(),
                option_index: 1,
                origin: Origin::InjectedOption,
                correctness: Some(1),
                continuous: None,
            }],
            ..Default::default()
        };
        set.write(dir.path()).unwrap();
        assert_eq!(ScoreSet::read(dir.path()).unwrap(), set);
        let line = fs::read_to_string(dir.path().join(SCORES_FILE)).unwrap();
        assert!(line.starts_with(r#"{"item_id":"a","option_index":1,"method":"sl","confidence":"#));
    }
}
