//! Per-method metrics over a score set and the files they are written to.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, SplitMode};
use super::sweep::{rank_methods, RankingRow, RankingTable};
use super::{other, FailedItem, Result, ScoreSet};
use crate::methods::{Family, Method};
use crate::metrics::{
    auarc, auroc, calibration_split, ece, fit_histogram_binning, rce, roc_points, threshold_label,
    EvalMode,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_MD: &str = "report.md";
pub const ROC_CSV: &str = "roc_points.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodStatus {
    Ok,
    Unavailable,
    NoScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: Method,
    pub label: String,
    pub status: MethodStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub auroc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auroc_undefined: Option<String>,
    pub auarc: Option<f64>,
    pub ece: Option<f64>,
    pub rce: Option<f64>,
    pub n_scored: usize,
    pub n_correct: usize,
    pub n_excluded: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<String>,
    pub roc_points: Vec<[f64; 2]>,
}

/// Metrics for one labeling: the gold labels, or one baseline threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub tau: Option<f64>,
    pub methods: Vec<MethodMetrics>,
    pub ranking: RankingRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemCounts {
    pub total: usize,
    pub scored: usize,
    pub failed: Vec<FailedItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub dataset: String,
    pub model: String,
    pub mode: EvalMode,
    pub settings: BTreeMap<String, serde_json::Value>,
    pub items: ItemCounts,
    pub blocks: Vec<MetricBlock>,
    pub p_true_modes: BTreeMap<String, usize>,
}

/// Confidence and binary label of every unit one method scored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MethodUnits {
    pub confidences: Vec<f64>,
    pub labels: Vec<u8>,
    pub excluded: usize,
}

#[derive(Debug, Clone, Copy)]
enum LabelValue {
    Binary(u8),
    Continuous(f64),
}

/// Units of each method under one labeling. `tau` turns continuous
/// correctness into labels; units whose label is missing are skipped.
pub fn method_units(set: &ScoreSet, tau: Option<f64>) -> BTreeMap<Method, MethodUnits> {
    let scored_origin = set.mode.scored_origin();
    let labels: HashMap<(&str, usize), LabelValue> = set
        .labels
        .iter()
        .filter(|l| l.origin == scored_origin)
        .filter_map(|l| {
            let v = match (l.correctness, l.continuous) {
                (Some(c), _) => LabelValue::Binary(c),
                (None, Some(s)) => LabelValue::Continuous(s),
                (None, None) => return None,
            };
            Some(((l.item_id.as_str(), l.option_index), v))
        })
        .collect();
    let excluded: HashSet<(&str, Option<usize>, Option<Method>)> = set
        .exclusions
        .iter()
        .map(|e| (e.item_id.as_str(), e.option_index, e.method))
        .collect();
    let is_excluded = |item: &str, idx: usize, m: Method| {
        [(Some(idx), Some(m)), (Some(idx), None), (None, Some(m)), (None, None)]
            .iter()
            .any(|&(i, mm)| excluded.contains(&(item, i, mm)))
    };
    let mut out: BTreeMap<Method, MethodUnits> = BTreeMap::new();
    for s in &set.scores {
        let entry = out.entry(s.method).or_default();
        if is_excluded(&s.item_id, s.option_index, s.method) {
            continue;
        }
        let label = match labels.get(&(s.item_id.as_str(), s.option_index)) {
            Some(LabelValue::Binary(b)) => *b,
            Some(LabelValue::Continuous(c)) => match tau {
                Some(t) => threshold_label(*c, t),
                None => continue,
            },
            None => continue,
        };
        entry.confidences.push(s.confidence);
        entry.labels.push(label);
    }
    for (m, u) in out.iter_mut() {
        u.excluded = set
            .exclusions
            .iter()
            .filter(|e| e.method.is_none() || e.method == Some(*m))
            .count();
    }
    out
}

fn ece_for(conf: &[f64], correctness: &[f64], cfg: &RunConfig) -> Option<f64> {
    let m = &cfg.metrics;
    let (fit, eval): (Vec<usize>, Vec<usize>) = match m.calibration_split {
        SplitMode::Half => calibration_split(conf.len(), m.split_seed),
        SplitMode::Full => ((0..conf.len()).collect(), (0..conf.len()).collect()),
    };
    if fit.is_empty() || eval.is_empty() {
        return None;
    }
    let pick = |idx: &[usize], v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let map = fit_histogram_binning(&pick(&fit, conf), &pick(&fit, correctness), m.hist_bins).ok()?;
    let calibrated = map.apply(&pick(&eval, conf));
    ece(&calibrated, &pick(&eval, correctness), m.ece_bins).ok()
}

pub fn method_metrics(method: Method, units: &MethodUnits, cfg: &RunConfig) -> MethodMetrics {
    let conf = &units.confidences;
    let labels = &units.labels;
    let correctness: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    let mut mm = MethodMetrics {
        method,
        label: method.label().to_string(),
        status: MethodStatus::Ok,
        reason: None,
        auroc: None,
        auroc_undefined: None,
        auarc: None,
        ece: None,
        rce: None,
        n_scored: conf.len(),
        n_correct: labels.iter().filter(|&&l| l == 1).count(),
        n_excluded: units.excluded,
        channel: None,
        roc_points: Vec::new(),
    };
    if conf.is_empty() {
        mm.status = MethodStatus::NoScores;
        mm.reason = Some("no scored units".into());
        return mm;
    }
    match auroc(conf, labels) {
        Ok(v) => mm.auroc = Some(v),
        Err(e) => mm.auroc_undefined = Some(e.to_string()),
    }
    mm.auarc = auarc(conf, labels).ok();
    mm.roc_points = roc_points(conf, labels)
        .map(|pts| pts.into_iter().map(|(f, t)| [f, t]).collect())
        .unwrap_or_default();
    mm.ece = ece_for(conf, &correctness, cfg);
    mm.rce = rce(conf, &correctness, cfg.metrics.rce_bins).ok();
    mm
}

fn block(cfg: &RunConfig, set: &ScoreSet, tau: Option<f64>) -> MetricBlock {
    let units = method_units(set, tau);
    let methods: Vec<MethodMetrics> = cfg
        .methods
        .iter()
        .map(|&m| {
            let mut mm = match set.unavailable.get(&m) {
                Some(reason) => MethodMetrics {
                    status: MethodStatus::Unavailable,
                    reason: Some(reason.clone()),
                    ..method_metrics(m, &MethodUnits::default(), cfg)
                },
                None => method_metrics(m, units.get(&m).unwrap_or(&MethodUnits::default()), cfg),
            };
            mm.channel = set.channels.get(&m).cloned();
            mm
        })
        .collect();
    let entries: Vec<(Method, Option<f64>)> = methods.iter().map(|m| (m.method, m.auroc)).collect();
    let pipeline = match set.mode {
        EvalMode::McqaEval => "MCQA-Eval",
        EvalMode::Baseline => "Baseline",
    };
    MetricBlock {
        tau,
        ranking: RankingRow::new(pipeline, tau, rank_methods(&entries)),
        methods,
    }
}

/// Metrics for every configured method: one block for option injection,
/// one block per threshold for the baseline (a single block for judge
/// labels).
pub fn evaluate(cfg: &RunConfig, set: &ScoreSet) -> Result<MetricReport> {
    let taus = cfg.taus();
    let blocks = if set.mode == EvalMode::Baseline && !taus.is_empty() {
        taus.iter().map(|&t| block(cfg, set, Some(t))).collect()
    } else {
        vec![block(cfg, set, None)]
    };
    let failed: HashSet<&str> = set.failed_items.iter().map(|f| f.item_id.as_str()).collect();
    Ok(MetricReport {
        schema_version: REPORT_SCHEMA_VERSION,
        dataset: cfg.dataset.name.clone(),
        model: cfg.generation.model.clone(),
        mode: set.mode,
        settings: cfg.settings(),
        items: ItemCounts {
            total: set.item_ids.len(),
            scored: set.item_ids.iter().filter(|i| !failed.contains(i.as_str())).count(),
            failed: set.failed_items.clone(),
        },
        blocks,
        p_true_modes: set.p_true_modes.clone(),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn md_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".to_string())
}

fn tau_suffix(tau: Option<f64>) -> String {
    tau.map(|t| format!("_tau_{t}")).unwrap_or_default()
}

impl MetricReport {
    /// Canonical JSON: keys sorted, shortest round-trip floats.
    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::to_value(self).map_err(other)?;
        Ok(serde_json::to_string_pretty(&value).map_err(other)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(other)
    }

    pub fn csv_name(tau: Option<f64>) -> String {
        format!("report{}.csv", tau_suffix(tau))
    }

    /// Fixed-column CSV of one block.
    pub fn to_csv(block: &MetricBlock) -> String {
        let mut out = String::from("method,auroc,auarc,ece,rce,n_scored,n_excluded\n");
        for m in &block.methods {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                m.method,
                cell(m.auroc),
                cell(m.auarc),
                cell(m.ece),
                cell(m.rce),
                m.n_scored,
                m.n_excluded
            );
        }
        out
    }

    pub fn roc_csv(block: &MetricBlock) -> String {
        let mut out = String::from("method,fpr,tpr\n");
        for m in &block.methods {
            for [f, t] in &m.roc_points {
                let _ = writeln!(out, "{},{f},{t}", m.method);
            }
        }
        out
    }

    pub fn ranking_table(&self) -> RankingTable {
        RankingTable {
            rows: self.blocks.iter().map(|b| b.ranking.clone()).collect(),
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Evaluation report\n\n");
        let mode = match self.mode {
            EvalMode::McqaEval => "option injection",
            EvalMode::Baseline => "sampled-response baseline",
        };
        let _ = writeln!(out, "Dataset `{}`, model `{}`, {mode}.", self.dataset, self.model);
        let _ = writeln!(
            out,
            "Items: {} total, {} scored, {} failed.\n",
            self.items.total,
            self.items.scored,
            self.items.failed.len()
        );
        for b in &self.blocks {
            match b.tau {
                Some(t) => {
                    let _ = writeln!(out, "## Metrics at τ = {t}\n");
                }
                None => out.push_str("## Metrics\n\n"),
            }
            out.push_str("| Method | AUROC | AUARC | ECE | RCE | Scored | Excluded |\n");
            out.push_str("|---|---|---|---|---|---|---|\n");
            for m in &b.methods {
                let name = match m.status {
                    MethodStatus::Ok => m.label.clone(),
                    MethodStatus::Unavailable => format!("{} (unavailable)", m.label),
                    MethodStatus::NoScores => format!("{} (no scores)", m.label),
                };
                let _ = writeln!(
                    out,
                    "| {name} | {} | {} | {} | {} | {} | {} |",
                    md_cell(m.auroc),
                    md_cell(m.auarc),
                    md_cell(m.ece),
                    md_cell(m.rce),
                    m.n_scored,
                    m.n_excluded
                );
            }
            out.push('\n');
        }
        out.push_str("## Rankings by AUROC\n\n");
        out.push_str(&self.ranking_table().to_markdown());
        out
    }

    /// Write `report.json`, `report.md`, and per block a CSV and ROC points.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(REPORT_JSON), self.to_json()?)?;
        fs::write(dir.join(REPORT_MD), self.to_markdown())?;
        for b in &self.blocks {
            fs::write(dir.join(Self::csv_name(b.tau)), Self::to_csv(b))?;
            fs::write(
                dir.join(format!("roc_points{}.csv", tau_suffix(b.tau))),
                Self::roc_csv(b),
            )?;
        }
        Ok(())
    }

    pub fn block(&self, tau: Option<f64>) -> Option<&MetricBlock> {
        self.blocks.iter().find(|b| b.tau == tau)
    }
}

impl MetricBlock {
    pub fn method(&self, m: Method) -> Option<&MethodMetrics> {
        self.methods.iter().find(|x| x.method == m)
    }
}

/// Family name used for ranking groups.
pub fn family_name(m: Method) -> &'static str {
    match m.family() {
        Family::Blackbox(_) => "Black-box",
        Family::Whitebox(_) => "White-box",
    }
}
