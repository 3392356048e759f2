//! Consistency-based confidence: degree and eccentricity over a response
//! similarity graph, scored for candidates injected one at a time.
//!
//! For each candidate the base matrix over the `n` samples is extended by one
//! row and column (`n` new pair scores) and the candidate's score is read at
//! index `n`. The base matrix is built once per item and shared across
//! candidates.

pub mod spectral;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::similarity::{
    build_matrix, extend_matrix, SimilarityError, SimilarityKind, SimilarityMatrix,
    SimilarityProvider,
};
pub use spectral::Dense;

#[derive(Debug, Error)]
pub enum BlackboxError {
    #[error("eigensolver did not converge after {sweeps} sweeps (relative off-diagonal norm {off:e})")]
    NotConverged { sweeps: usize, off: f64 },
    #[error("similarity graph is not symmetric at ({i}, {j})")]
    Asymmetric { i: usize, j: usize },
    #[error("eccentricity needs at least 2 nodes")]
    TooSmall,
    #[error("invalid spectral config: {0}")]
    Config(String),
    #[error("method {method:?} needs a {expected} provider, got {got}")]
    ProviderKind {
        method: BlackboxMethod,
        expected: SimilarityKind,
        got: SimilarityKind,
    },
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

pub type Result<T, E = BlackboxError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlackboxMethod {
    DegJ,
    DegE,
    DegC,
    EccJ,
    EccE,
    EccC,
}

impl BlackboxMethod {
    pub const ALL: [BlackboxMethod; 6] = [
        BlackboxMethod::DegJ,
        BlackboxMethod::DegE,
        BlackboxMethod::DegC,
        BlackboxMethod::EccJ,
        BlackboxMethod::EccE,
        BlackboxMethod::EccC,
    ];

    pub fn kind(self) -> SimilarityKind {
        match self {
            BlackboxMethod::DegJ | BlackboxMethod::EccJ => SimilarityKind::Jaccard,
            BlackboxMethod::DegE | BlackboxMethod::EccE => SimilarityKind::NliEntailment,
            BlackboxMethod::DegC | BlackboxMethod::EccC => SimilarityKind::NliContradiction,
        }
    }

    pub fn is_degree(self) -> bool {
        matches!(
            self,
            BlackboxMethod::DegJ | BlackboxMethod::DegE | BlackboxMethod::DegC
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    pub eigenvalue_cutoff: f64,
    pub min_embedding_dims: usize,
    pub symmetric_eps: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            eigenvalue_cutoff: 0.9,
            min_embedding_dims: 1,
            symmetric_eps: 1e-9,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eigenvalue_cutoff > 0.0 && self.eigenvalue_cutoff < 2.0) {
            return Err(BlackboxError::Config(format!(
                "eigenvalue_cutoff {} not in (0, 2)",
                self.eigenvalue_cutoff
            )));
        }
        if self.min_embedding_dims < 1 {
            return Err(BlackboxError::Config("min_embedding_dims must be >= 1".into()));
        }
        if self.symmetric_eps.is_nan() || self.symmetric_eps < 0.0 {
            return Err(BlackboxError::Config("symmetric_eps must be >= 0".into()));
        }
        Ok(())
    }
}

/// Similarity graph weights: the matrix itself for Jaccard and entailment,
/// `1 - M` with a unit diagonal for contradiction.
pub fn effective_similarity(m: &SimilarityMatrix) -> Dense {
    let n = m.n();
    match m.kind() {
        SimilarityKind::Jaccard | SimilarityKind::NliEntailment => Dense::new(n, m.values().to_vec()),
        SimilarityKind::NliContradiction => {
            let mut data: Vec<f64> = m.values().iter().map(|v| 1.0 - v).collect();
            for i in 0..n {
                data[i * n + i] = 1.0;
            }
            Dense::new(n, data)
        }
    }
}

/// Mean similarity of node `i` to every other node; 1 for a single node.
pub fn degree_confidence(w: &Dense, i: usize) -> f64 {
    if w.n == 1 {
        return 1.0;
    }
    let total: f64 = w
        .row(i)
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, v)| v)
        .sum();
    total / (w.n - 1) as f64
}

fn check_symmetric(w: &Dense, eps: f64) -> Result<()> {
    for i in 0..w.n {
        for j in i + 1..w.n {
            if (w.get(i, j) - w.get(j, i)).abs() > eps {
                return Err(BlackboxError::Asymmetric { i, j });
            }
        }
    }
    Ok(())
}

/// Negative distance of every node's spectral embedding from the centroid.
pub fn eccentricity_scores(w: &Dense, cfg: &SpectralConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if w.n < 2 {
        return Err(BlackboxError::TooSmall);
    }
    check_symmetric(w, cfg.symmetric_eps)?;
    let emb = spectral::spectral_embedding(w, cfg.eigenvalue_cutoff, cfg.min_embedding_dims)?;
    Ok(spectral::centroid_scores(&emb))
}

pub fn eccentricity_confidence(w: &Dense, i: usize, cfg: &SpectralConfig) -> Result<f64> {
    Ok(eccentricity_scores(w, cfg)?[i])
}

/// Degree and eccentricity scores of every candidate under one similarity
/// kind, sharing the extended matrices between the two measures.
#[derive(Debug, Clone, PartialEq)]
pub struct KindScores {
    pub degree: Vec<f64>,
    pub eccentricity: Vec<f64>,
}

pub struct CandidateScorer<'a> {
    samples: &'a [String],
    provider: &'a dyn SimilarityProvider,
    context: Option<&'a str>,
    base: SimilarityMatrix,
}

impl<'a> CandidateScorer<'a> {
    /// Build the base matrix over the samples once.
    pub fn new(
        samples: &'a [String],
        provider: &'a dyn SimilarityProvider,
        context: Option<&'a str>,
    ) -> Result<Self> {
        let base = build_matrix(samples, provider.kind(), provider, context)?;
        Ok(Self {
            samples,
            provider,
            context,
            base,
        })
    }

    pub fn base(&self) -> &SimilarityMatrix {
        &self.base
    }

    pub fn extended(&self, candidate: &str) -> Result<SimilarityMatrix> {
        Ok(extend_matrix(
            &self.base,
            self.samples,
            candidate,
            self.provider,
            self.context,
        )?)
    }

    pub fn score_all(&self, candidates: &[String], cfg: &SpectralConfig) -> Result<KindScores> {
        let n = self.samples.len();
        let mut degree = Vec::with_capacity(candidates.len());
        let mut eccentricity = Vec::with_capacity(candidates.len());
        for cand in candidates {
            let w = effective_similarity(&self.extended(cand)?);
            degree.push(degree_confidence(&w, n));
            eccentricity.push(eccentricity_confidence(&w, n, cfg)?);
        }
        Ok(KindScores {
            degree,
            eccentricity,
        })
    }
}

/// Score every option for one black-box method.
pub fn score_candidates(
    samples: &[String],
    options: &[String],
    method: BlackboxMethod,
    provider: &dyn SimilarityProvider,
    context: Option<&str>,
    cfg: &SpectralConfig,
) -> Result<Vec<f64>> {
    if provider.kind() != method.kind() {
        return Err(BlackboxError::ProviderKind {
            method,
            expected: method.kind(),
            got: provider.kind(),
        });
    }
    if samples.is_empty() {
        return Err(SimilarityError::Empty.into());
    }
    let scorer = CandidateScorer::new(samples, provider, context)?;
    let n = samples.len();
    options
        .iter()
        .map(|opt| {
            let w = effective_similarity(&scorer.extended(opt)?);
            if method.is_degree() {
                Ok(degree_confidence(&w, n))
            } else {
                eccentricity_confidence(&w, n, cfg)
            }
        })
        .collect()
}
