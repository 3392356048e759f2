//! Confidence from token logprobs: sequence likelihood, mean log-likelihood,
//! relevance-weighted (TokenSAR) and attention-weighted (CSL, CSL-Next)
//! aggregates, plus elicited P(true).
//!
//! Perplexity is reported as mean log-likelihood, which is strictly monotone
//! in negative perplexity; every rank-based metric is unaffected and ECE is
//! always computed after histogram binning.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::TokenLogprobSeq;
use crate::similarity::{SimilarityError, SimilarityKind, SimilarityProvider};

#[derive(Debug, Error)]
pub enum WhiteboxError {
    #[error("token sequence is empty")]
    Empty,
    #[error("{weights} weights for {tokens} tokens")]
    LengthMismatch { tokens: usize, weights: usize },
    #[error("token {index} has no attention weight")]
    MissingAttention { index: usize },
    #[error("weight {index} is {value}; weights must be finite and non-negative")]
    InvalidWeight { index: usize, value: f64 },
    #[error("no P(true) entry for option {0}")]
    MissingPTrue(usize),
    #[error("relevance needs a jaccard or entailment provider, got {0}")]
    RelevanceKind(SimilarityKind),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

pub type Result<T, E = WhiteboxError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhiteboxMethod {
    Sl,
    Perplexity,
    TokenSar,
    Csl,
    CslNext,
    PTrue,
}

impl WhiteboxMethod {
    /// Attention channel requested from the backend, if the method needs one.
    pub fn channel(self) -> Option<&'static str> {
        match self {
            WhiteboxMethod::Csl => Some("csl"),
            WhiteboxMethod::CslNext => Some("csl_next"),
            _ => None,
        }
    }
}

fn nonempty(seq: &TokenLogprobSeq) -> Result<()> {
    if seq.is_empty() {
        Err(WhiteboxError::Empty)
    } else {
        Ok(())
    }
}

/// Sum of token logprobs.
pub fn sl(seq: &TokenLogprobSeq) -> Result<f64> {
    nonempty(seq)?;
    Ok(seq.logprobs().sum())
}

/// Mean token logprob.
pub fn perplexity_conf(seq: &TokenLogprobSeq) -> Result<f64> {
    Ok(sl(seq)? / seq.len() as f64)
}

/// Scale non-negative weights to sum to 1; an all-zero vector becomes uniform.
pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(WhiteboxError::Empty);
    }
    for (index, &value) in weights.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(WhiteboxError::InvalidWeight { index, value });
        }
    }
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        log::warn!("all {} weights are zero, using uniform weights", weights.len());
        return Ok(vec![1.0 / weights.len() as f64; weights.len()]);
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

fn weighted(seq: &TokenLogprobSeq, weights: &[f64]) -> Result<f64> {
    nonempty(seq)?;
    if weights.len() != seq.len() {
        return Err(WhiteboxError::LengthMismatch {
            tokens: seq.len(),
            weights: weights.len(),
        });
    }
    let w = normalize_weights(weights)?;
    Ok(seq.logprobs().zip(w).map(|(lp, w)| w * lp).sum())
}

/// Per-token relevance for one candidate. `fallback` is set when every raw
/// weight was zero and uniform weights were substituted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceWeights {
    pub weights: Vec<f64>,
    pub kind: SimilarityKind,
    pub fallback: bool,
}

/// `w_t = 1 - sim(full, full without token t)`, clamped at 0, with the
/// question as provider context.
pub fn relevance_weights(
    tokens: &[String],
    provider: &dyn SimilarityProvider,
    context: Option<&str>,
) -> Result<RelevanceWeights> {
    if tokens.is_empty() {
        return Err(WhiteboxError::Empty);
    }
    let kind = provider.kind();
    if kind == SimilarityKind::NliContradiction {
        return Err(WhiteboxError::RelevanceKind(kind));
    }
    let full: String = tokens.concat();
    let reduced: Vec<String> = (0..tokens.len())
        .map(|skip| {
            tokens
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != skip)
                .map(|(_, t)| t.as_str())
                .collect()
        })
        .collect();
    let pairs: Vec<(&str, &str)> = reduced.iter().map(|r| (full.as_str(), r.as_str())).collect();
    let sims = provider.score_pairs(context, &pairs)?;
    if sims.len() != pairs.len() {
        return Err(SimilarityError::LengthMismatch {
            expected: pairs.len(),
            got: sims.len(),
        }
        .into());
    }
    let raw: Vec<f64> = sims
        .iter()
        .map(|(ab, ba)| (1.0 - (ab + ba) / 2.0).max(0.0))
        .collect();
    let fallback = raw.iter().all(|&w| w == 0.0);
    let weights = if fallback {
        log::warn!("relevance weights are all zero, using uniform weights");
        vec![1.0; raw.len()]
    } else {
        raw
    };
    Ok(RelevanceWeights {
        weights,
        kind,
        fallback,
    })
}

/// Relevance-weighted logprob.
pub fn token_sar(seq: &TokenLogprobSeq, weights: &RelevanceWeights) -> Result<f64> {
    weighted(seq, &weights.weights)
}

/// Attention-weighted logprob over the sequence's attention channel.
pub fn attention_weighted(seq: &TokenLogprobSeq) -> Result<f64> {
    let attention = seq
        .tokens
        .iter()
        .enumerate()
        .map(|(index, t)| t.attention_weight.ok_or(WhiteboxError::MissingAttention { index }))
        .collect::<Result<Vec<f64>>>()?;
    weighted(seq, &attention)
}

pub fn csl(seq: &TokenLogprobSeq) -> Result<f64> {
    attention_weighted(seq)
}

/// Same aggregation as [`csl`], applied to a sequence fetched on the
/// `csl_next` channel.
pub fn csl_next(seq: &TokenLogprobSeq) -> Result<f64> {
    attention_weighted(seq)
}

pub fn p_true_score(p_true: &std::collections::BTreeMap<usize, f64>, option_index: usize) -> Result<f64> {
    p_true
        .get(&option_index)
        .copied()
        .ok_or(WhiteboxError::MissingPTrue(option_index))
}
