//! Multiple-choice QA items: ingest, subsampling and prompt rendering.
//!
//! All datasets share one line-delimited JSON ingest schema:
//!
//! ```text
//! {"id": "qasc-0001", "dataset": "qasc", "context": null,
//!  "question": "What do plants need?", "options": ["light", "sand"], "correct_index": 0}
//! ```
//!
//! `context` may be omitted. Converters from upstream formats live outside the
//! crate (see `docs/ingest.md`).

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;

pub const MAX_OPTIONS: usize = 26;

pub const CONTEXT_SLOT: &str = "{{context}}";
pub const QUESTION_SLOT: &str = "{{question}}";
pub const OPTION_SLOT: &str = "{{option}}";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: correct_index {index} out of range for {options} options (index out of range)")]
    IndexOutOfRange {
        line: usize,
        index: usize,
        options: usize,
    },
    #[error("line {line}: {options} options, need between 2 and {MAX_OPTIONS}")]
    OptionCount { line: usize, options: usize },
    #[error("line {line}: option {index} is empty")]
    EmptyOption { line: usize, index: usize },
    #[error("line {line}: options {first} and {second} coincide after whitespace normalization")]
    DuplicateOptions {
        line: usize,
        first: usize,
        second: usize,
    },
    #[error("line {line}: record belongs to dataset {found:?}, expected {expected:?}")]
    DatasetMismatch {
        line: usize,
        expected: String,
        found: String,
    },
    #[error("cannot take {requested} items from a pool of {available}")]
    SubsampleTooLarge { requested: usize, available: usize },
    #[error("template {template:?}: {message}")]
    Template { template: String, message: String },
    #[error("template {template:?}: unresolved placeholder {placeholder}")]
    UnresolvedPlaceholder {
        template: String,
        placeholder: String,
    },
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// One multiple-choice question with exactly one correct option.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqItem {
    pub id: String,
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub question: String,
    pub options: Vec<String>,
    pub correct_index: usize,
}

impl McqItem {
    pub fn num_options(&self) -> usize {
        self.options.len()
    }

    pub fn correct_option(&self) -> &str {
        &self.options[self.correct_index]
    }

    /// Checks the item invariants; `line` is only used for error reporting.
    pub fn validate(&self, line: usize) -> Result<()> {
        let k = self.options.len();
        if !(2..=MAX_OPTIONS).contains(&k) {
            return Err(DatasetError::OptionCount { line, options: k });
        }
        if self.correct_index >= k {
            return Err(DatasetError::IndexOutOfRange {
                line,
                index: self.correct_index,
                options: k,
            });
        }
        let normalized: Vec<String> = self.options.iter().map(|o| normalize_ws(o)).collect();
        for (i, norm) in normalized.iter().enumerate() {
            if norm.is_empty() {
                return Err(DatasetError::EmptyOption { line, index: i });
            }
            if let Some(first) = normalized[..i].iter().position(|o| o == norm) {
                return Err(DatasetError::DuplicateOptions {
                    line,
                    first,
                    second: i,
                });
            }
        }
        Ok(())
    }
}

/// Trim and collapse internal whitespace runs to a single space. Used for
/// distinctness checks only; stored text stays verbatim.
pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestRecord {
    id: String,
    #[serde(default)]
    dataset: Option<String>,
    #[serde(default)]
    context: Option<String>,
    question: String,
    options: Vec<String>,
    correct_index: usize,
}

/// Load a line-delimited ingest file. Blank lines are skipped; line numbers in
/// errors are 1-based. Records without a `dataset` field inherit `dataset`.
pub fn load_dataset(path: &Path, dataset: &str) -> Result<Vec<McqItem>> {
    let content = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&content, dataset)
}

pub fn parse_dataset(content: &str, dataset: &str) -> Result<Vec<McqItem>> {
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: IngestRecord = serde_json::from_str(raw).map_err(|e| DatasetError::Malformed {
            line,
            message: e.to_string(),
        })?;
        let found = rec.dataset.unwrap_or_else(|| dataset.to_string());
        if found != dataset {
            return Err(DatasetError::DatasetMismatch {
                line,
                expected: dataset.to_string(),
                found,
            });
        }
        let item = McqItem {
            id: rec.id,
            dataset: found,
            context: rec.context.filter(|c| !c.trim().is_empty()),
            question: rec.question,
            options: rec.options,
            correct_index: rec.correct_index,
        };
        item.validate(line)?;
        if !seen.insert(item.id.clone()) {
            return Err(DatasetError::DuplicateId { line, id: item.id });
        }
        items.push(item);
    }
    Ok(items)
}

pub fn write_dataset(items: &[McqItem], path: &Path) -> Result<()> {
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    for item in items {
        let line = serde_json::to_string(item).expect("items serialize");
        writeln!(file, "{line}").map_err(io_err)?;
    }
    file.sync_all().map_err(io_err)
}

/// Deterministic subsample: Fisher-Yates shuffle of the indices with
/// [`SplitMix64`] seeded by `seed`, keep the first `n`, then restore file order.
pub fn subsample(items: &[McqItem], n: usize, seed: u64) -> Result<Vec<McqItem>> {
    if n > items.len() {
        return Err(DatasetError::SubsampleTooLarge {
            requested: n,
            available: items.len(),
        });
    }
    let mut indices: Vec<usize> = (0..items.len()).collect();
    SplitMix64::new(seed).shuffle(&mut indices);
    let mut chosen = indices[..n].to_vec();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| items[i].clone()).collect())
}

/// A free-form QA prompt with `{{context}}`, `{{question}}` and `{{option}}`
/// placeholders. Text before `{{option}}` is the sampling prompt; the option is
/// injected where the model's answer would go.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
}

const BUILTIN_QA: &str = include_str!("../templates/qa.txt");
const BUILTIN_READING: &str = include_str!("../templates/reading.txt");

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            body: body.into(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "template".to_string());
        Ok(Self::new(name, body))
    }

    /// Built-in templates: `qa` (question only) and `reading` (passage first).
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "qa" => Some(Self::new("qa", BUILTIN_QA)),
            "reading" => Some(Self::new("reading", BUILTIN_READING)),
            _ => None,
        }
    }

    fn err(&self, message: impl Into<String>) -> DatasetError {
        DatasetError::Template {
            template: self.name.clone(),
            message: message.into(),
        }
    }

    /// Text preceding and following `{{option}}`, with the context line
    /// removed when `context` is `None`.
    fn split(&self, context: Option<&str>, question: &str) -> Result<(String, String)> {
        let body = &self.body;
        for slot in [QUESTION_SLOT, CONTEXT_SLOT, OPTION_SLOT] {
            let count = body.matches(slot).count();
            if slot == QUESTION_SLOT && count != 1 {
                return Err(self.err(format!("{QUESTION_SLOT} must appear exactly once")));
            }
            if count > 1 {
                return Err(self.err(format!("{slot} may appear at most once")));
            }
        }
        let mut rest = body.as_str();
        while let Some(start) = rest.find("{{") {
            let tail = &rest[start..];
            let end = tail.find("}}").map(|e| e + 2).unwrap_or(tail.len());
            let token = &tail[..end];
            if ![QUESTION_SLOT, CONTEXT_SLOT, OPTION_SLOT].contains(&token) {
                return Err(DatasetError::UnresolvedPlaceholder {
                    template: self.name.clone(),
                    placeholder: token.to_string(),
                });
            }
            rest = &tail[end..];
        }

        let body = match context {
            Some(_) => body.clone(),
            None => elide_context_line(body),
        };
        let (before, after) = match body.find(OPTION_SLOT) {
            Some(pos) => (&body[..pos], &body[pos + OPTION_SLOT.len()..]),
            None => (body.as_str(), ""),
        };
        // Each slot occurs once in the template, so filling the two halves
        // separately never re-scans substituted text.
        let fill = |part: &str| {
            let s = part.replacen(QUESTION_SLOT, question, 1);
            match context {
                Some(ctx) => s.replacen(CONTEXT_SLOT, ctx, 1),
                None => s,
            }
        };
        Ok((fill(before), fill(after)))
    }

    pub fn render(&self, item: &McqItem) -> Result<RenderedItem> {
        let (prompt, postamble) = self.split(item.context.as_deref(), &item.question)?;
        Ok(RenderedItem {
            item_id: item.id.clone(),
            prompt,
            postamble,
            candidates: item.options.clone(),
        })
    }

    /// Render the sampling prompt for a bare question (baseline mode inputs).
    pub fn render_question(&self, context: Option<&str>, question: &str) -> Result<String> {
        Ok(self.split(context, question)?.0)
    }
}

fn elide_context_line(body: &str) -> String {
    let Some(pos) = body.find(CONTEXT_SLOT) else {
        return body.to_string();
    };
    let line_start = body[..pos].rfind('\n').map(|p| p + 1).unwrap_or(0);
    let line_end = body[pos..]
        .find('\n')
        .map(|p| pos + p + 1)
        .unwrap_or(body.len());
    format!("{}{}", &body[..line_start], &body[line_end..])
}

/// An item rendered for option injection: one sampling prompt and K
/// candidates that stand in for generations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedItem {
    pub item_id: String,
    pub prompt: String,
    pub postamble: String,
    pub candidates: Vec<String>,
}

impl RenderedItem {
    /// Full text with candidate `index` placed where the answer goes.
    pub fn injected(&self, index: usize) -> String {
        format!("{}{}{}", self.prompt, self.candidates[index], self.postamble)
    }
}
