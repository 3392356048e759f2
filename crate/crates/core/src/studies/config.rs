//! Run configuration, read from a TOML file.
//!
//! ```toml
//! schema_version = 1
//! mode = "mcqa_eval"            # or "baseline"
//! methods = ["deg_j", "sl"]     # default: all twelve
//!
//! [dataset]
//! path = "items.jsonl"
//! name = "qasc"
//! template = "qa"               # built-in name or template file path
//! subsample = { n = 1000, seed = 42 }
//!
//! [generation]                  # see GenerationConfig
//! backend = "replay"
//! model = "llama3-8b"
//!
//! [records]
//! root = "records"
//!
//! [similarity]
//! contextualize = true
//! nli_entailment = { source = "precomputed", path = "matrices" }
//! nli_contradiction = { source = "sidecar", endpoint = "http://127.0.0.1:8000" }
//!
//! [metrics]
//! hist_bins = 10
//! ece_bins = 10
//! rce_bins = 20
//! calibration_split = "half"    # or "full"
//! split_seed = 0
//!
//! [baseline]                    # baseline mode only
//! taus = [0.5, 0.7, 0.9]
//! correctness = "similarity"    # or "judge" (then [judge] is required)
//! similarity = "jaccard"
//! ```
//!
//! Relative paths resolve against the directory containing the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::StudyError;
use crate::blackbox::SpectralConfig;
use crate::dataset::PromptTemplate;
use crate::gateway::GenerationConfig;
use crate::methods::Method;
use crate::metrics::EvalMode;
use crate::similarity::SimilarityKind;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsampleSpec {
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub name: String,
    #[serde(default = "default_template")]
    pub template: String,
    #[serde(default)]
    pub subsample: Option<SubsampleSpec>,
}

fn default_template() -> String {
    "qa".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum NliSource {
    /// Matrix files `<path>/<item_id>.<kind>.txt` over the item's samples
    /// followed by its options.
    Precomputed { path: PathBuf },
    Sidecar { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilaritySpec {
    /// Pass the question as NLI context.
    pub contextualize: bool,
    pub nli_entailment: Option<NliSource>,
    pub nli_contradiction: Option<NliSource>,
}

impl Default for SimilaritySpec {
    fn default() -> Self {
        Self {
            contextualize: true,
            nli_entailment: None,
            nli_contradiction: None,
        }
    }
}

impl SimilaritySpec {
    pub fn source(&self, kind: SimilarityKind) -> Option<&NliSource> {
        match kind {
            SimilarityKind::Jaccard => None,
            SimilarityKind::NliEntailment => self.nli_entailment.as_ref(),
            SimilarityKind::NliContradiction => self.nli_contradiction.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WhiteboxSpec {
    /// Similarity kind that scores token removals for TokenSAR.
    pub relevance: SimilarityKind,
    /// Show the sampled responses in the P(true) prompt.
    pub p_true_with_samples: bool,
}

impl Default for WhiteboxSpec {
    fn default() -> Self {
        Self {
            relevance: SimilarityKind::Jaccard,
            p_true_with_samples: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Seeded 50/50 split: fit on one half, evaluate ECE on the other.
    #[default]
    Half,
    /// Fit and evaluate on the same scores.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSpec {
    pub hist_bins: usize,
    pub ece_bins: usize,
    pub rce_bins: usize,
    pub calibration_split: SplitMode,
    pub split_seed: u64,
}

impl Default for MetricSpec {
    fn default() -> Self {
        Self {
            hist_bins: 10,
            ece_bins: 10,
            rce_bins: 20,
            calibration_split: SplitMode::Half,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorrectnessSource {
    #[default]
    Similarity,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSpec {
    pub taus: Vec<f64>,
    pub correctness: CorrectnessSource,
    pub similarity: SimilarityKind,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self {
            taus: Vec::new(),
            correctness: CorrectnessSource::Similarity,
            similarity: SimilarityKind::Jaccard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordSpec {
    pub root: PathBuf,
}

impl Default for RecordSpec {
    fn default() -> Self {
        Self {
            root: PathBuf::from("records"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub mode: EvalMode,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub records: RecordSpec,
    #[serde(default)]
    pub similarity: SimilaritySpec,
    #[serde(default)]
    pub whitebox: WhiteboxSpec,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub metrics: MetricSpec,
    #[serde(default)]
    pub baseline: Option<BaselineSpec>,
    #[serde(default)]
    pub judge: Option<GenerationConfig>,
    #[serde(default = "default_max_failed")]
    pub max_failed_fraction: f64,
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_max_failed() -> f64 {
    0.01
}

fn config_err(msg: impl Into<String>) -> StudyError {
    StudyError::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, StudyError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, StudyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.path);
        fix(&mut self.records.root);
        if let Some(out) = &mut self.output_dir {
            fix(out);
        }
        for src in [&mut self.similarity.nli_entailment, &mut self.similarity.nli_contradiction]
            .into_iter()
            .flatten()
        {
            if let NliSource::Precomputed { path } = src {
                fix(path);
            }
        }
        if PromptTemplate::builtin(&self.dataset.template).is_none() {
            let p = base.join(&self.dataset.template);
            self.dataset.template = p.to_string_lossy().into_owned();
        }
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.methods.is_empty() {
            return Err(config_err("no methods configured"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.methods {
            if !seen.insert(*m) {
                return Err(config_err(format!("method {m} listed twice")));
            }
        }
        self.generation
            .validate()
            .map_err(|e| config_err(format!("generation: {e}")))?;
        self.spectral
            .validate()
            .map_err(|e| config_err(format!("spectral: {e}")))?;
        let m = &self.metrics;
        if m.hist_bins < 1 || m.ece_bins < 1 || m.rce_bins < 2 {
            return Err(config_err("bin counts must be >= 1 (rce_bins >= 2)"));
        }
        if !(0.0..=1.0).contains(&self.max_failed_fraction) {
            return Err(config_err("max_failed_fraction must be in [0, 1]"));
        }
        if self.whitebox.relevance == SimilarityKind::NliContradiction {
            return Err(config_err("whitebox.relevance cannot be nli_contradiction"));
        }
        for kind in self.required_kinds() {
            if kind != SimilarityKind::Jaccard && self.similarity.source(kind).is_none() {
                return Err(config_err(format!("similarity.{kind} source is not configured")));
            }
        }
        match self.mode {
            EvalMode::McqaEval => {
                if self.baseline.as_ref().is_some_and(|b| !b.taus.is_empty()) {
                    return Err(config_err("mcqa_eval mode does not take thresholds (taus)"));
                }
            }
            EvalMode::Baseline => {
                let b = self
                    .baseline
                    .as_ref()
                    .ok_or_else(|| config_err("baseline mode requires a [baseline] section"))?;
                for &t in &b.taus {
                    if !(0.0..=1.0).contains(&t) {
                        return Err(config_err(format!("tau {t} outside [0, 1]")));
                    }
                }
                match b.correctness {
                    CorrectnessSource::Similarity if b.taus.is_empty() => {
                        return Err(config_err("baseline mode requires at least one tau"));
                    }
                    CorrectnessSource::Judge if self.judge.is_none() => {
                        return Err(config_err("judge correctness requires a [judge] section"));
                    }
                    CorrectnessSource::Judge if !b.taus.is_empty() => {
                        return Err(config_err("judge correctness does not take taus"));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Similarity kinds any configured method (or baseline labeling) reads.
    pub fn required_kinds(&self) -> Vec<SimilarityKind> {
        let mut kinds = std::collections::BTreeSet::new();
        for m in &self.methods {
            if let crate::methods::Family::Blackbox(b) = m.family() {
                kinds.insert(b.kind());
            }
            if *m == Method::TokenSar {
                kinds.insert(self.whitebox.relevance);
            }
        }
        if self.mode == EvalMode::Baseline {
            if let Some(b) = &self.baseline {
                if b.correctness == CorrectnessSource::Similarity {
                    kinds.insert(b.similarity);
                }
            }
        }
        kinds.into_iter().collect()
    }

    pub fn template(&self) -> Result<PromptTemplate, StudyError> {
        match PromptTemplate::builtin(&self.dataset.template) {
            Some(t) => Ok(t),
            None => PromptTemplate::from_file(Path::new(&self.dataset.template))
                .map_err(|e| config_err(e.to_string())),
        }
    }

    /// Baseline thresholds, ascending and deduplicated.
    pub fn taus(&self) -> Vec<f64> {
        let mut taus = self.baseline.as_ref().map(|b| b.taus.clone()).unwrap_or_default();
        taus.sort_by(f64::total_cmp);
        taus.dedup();
        taus
    }

    /// Settings echoed into every report.
    pub fn settings(&self) -> BTreeMap<String, serde_json::Value> {
        let mut s = BTreeMap::new();
        let g = &self.generation;
        s.insert(
            "generation".into(),
            serde_json::json!({
                "model": g.model,
                "n_samples": g.n_samples,
                "temperature": g.temperature,
                "max_tokens": g.max_tokens,
                "stop": g.stop,
                "request_seed": g.request_seed,
                "p_true_mode": g.p_true_mode,
                "p_true_samples": g.p_true_samples,
                "config_digest": g.digest(),
            }),
        );
        s.insert("metrics".into(), serde_json::to_value(&self.metrics).expect("serializes"));
        s.insert("spectral".into(), serde_json::to_value(&self.spectral).expect("serializes"));
        s.insert("whitebox".into(), serde_json::to_value(&self.whitebox).expect("serializes"));
        s.insert(
            "similarity".into(),
            serde_json::json!({"contextualize": self.similarity.contextualize}),
        );
        s.insert("mode".into(), serde_json::to_value(self.mode).expect("serializes"));
        if let Some(b) = &self.baseline {
            s.insert("baseline".into(), serde_json::to_value(b).expect("serializes"));
        }
        s
    }
}
