//! Correctness labels and evaluation metrics.

pub mod calibration;
pub mod ranking;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::McqItem;
use crate::similarity::{SimilarityError, SimilarityProvider};

pub use calibration::{calibration_split, ece, fit_histogram_binning, rce, CalibrationMap};
pub use ranking::{auarc, auroc, roc_points};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("no scores")]
    Empty,
    #[error("undefined AUROC: {positives} correct and {negatives} incorrect units")]
    UndefinedAuroc { positives: usize, negatives: usize },
    #[error("confidence {index} is not finite")]
    NonFinite { index: usize },
    #[error("label {index} is {value}, expected 0 or 1")]
    InvalidLabel { index: usize, value: u8 },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid bin count {0}")]
    InvalidBins(usize),
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("no reference answers")]
    NoReferences,
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

pub(crate) fn check_finite(confidences: &[f64]) -> Result<()> {
    match confidences.iter().position(|c| !c.is_finite()) {
        Some(index) => Err(MetricError::NonFinite { index }),
        None => Ok(()),
    }
}

pub(crate) fn check_inputs(confidences: &[f64], labels: &[u8]) -> Result<()> {
    if confidences.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            left: confidences.len(),
            right: labels.len(),
        });
    }
    if confidences.is_empty() {
        return Err(MetricError::Empty);
    }
    check_finite(confidences)?;
    if let Some(index) = labels.iter().position(|&l| l > 1) {
        return Err(MetricError::InvalidLabel {
            index,
            value: labels[index],
        });
    }
    Ok(())
}

/// One-hot labels over the item's options.
pub fn gold_labels(item: &McqItem) -> Vec<u8> {
    (0..item.options.len())
        .map(|i| u8::from(i == item.correct_index))
        .collect()
}

/// Maximum symmetrized similarity of `response` to any reference, and the
/// label `sim > tau`.
pub fn similarity_correctness(
    response: &str,
    refs: &[String],
    tau: f64,
    provider: &dyn SimilarityProvider,
    context: Option<&str>,
) -> Result<(f64, u8)> {
    if refs.is_empty() {
        return Err(MetricError::NoReferences);
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(MetricError::InvalidThreshold(tau));
    }
    let pairs: Vec<(&str, &str)> = refs.iter().map(|r| (response, r.as_str())).collect();
    let scores = provider.score_pairs(context, &pairs)?;
    let sim = scores
        .iter()
        .map(|(ab, ba)| ((ab + ba) / 2.0).clamp(0.0, 1.0))
        .fold(0.0, f64::max);
    Ok((sim, threshold_label(sim, tau)))
}

/// Strict threshold: correct only when `sim > tau`.
pub fn threshold_label(sim: f64, tau: f64) -> u8 {
    u8::from(sim > tau)
}

/// Where a scored unit came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    InjectedOption,
    SampledResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    McqaEval,
    Baseline,
}

impl EvalMode {
    /// The unit type that enters metric computation in this mode.
    pub fn scored_origin(self) -> Origin {
        match self {
            EvalMode::McqaEval => Origin::InjectedOption,
            EvalMode::Baseline => Origin::SampledResponse,
        }
    }
}

/// Keep only the units that are scored in `mode`; the rest are metadata.
pub fn exclusion_filter<T>(units: Vec<(Origin, T)>, mode: EvalMode) -> Vec<T> {
    let keep = mode.scored_origin();
    units
        .into_iter()
        .filter(|(o, _)| *o == keep)
        .map(|(_, t)| t)
        .collect()
}

/// A confidence with its correctness label. `continuous` keeps the
/// pre-threshold similarity when the label came from one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub item_id: String,
    pub index: usize,
    pub confidence: f64,
    pub correctness: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuous: Option<f64>,
}
