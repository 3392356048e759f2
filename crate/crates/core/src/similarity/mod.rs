//! Pairwise response similarity and the symmetric matrices built from it.
//!
//! Providers return directional scores `(p_ab, p_ba)`; matrices store their
//! arithmetic mean. Contradiction matrices hold raw contradiction
//! probabilities with a zero diagonal. Turning them into similarities is the
//! job of [`crate::blackbox`].

pub mod matrix_file;
pub mod nli;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::sha256_hex;

pub use matrix_file::{load_precomputed, write_matrix};

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("similarity provider failed: {0}")]
    Provider(String),
    #[error("provider returned non-finite score for pair {pair}")]
    NonFinite { pair: usize },
    #[error("provider returned {got} scores for {expected} pairs")]
    LengthMismatch { expected: usize, got: usize },
    #[error("matrix kind {matrix} does not match requested kind {requested}")]
    KindMismatch {
        matrix: SimilarityKind,
        requested: SimilarityKind,
    },
    #[error("matrix context does not match the request context")]
    ContextMismatch,
    #[error("shape error: {0}")]
    Shape(String),
    #[error("entry ({i}, {j}) = {value} is outside [0, 1]")]
    Range { i: usize, j: usize, value: f64 },
    #[error("matrix is not symmetric at ({i}, {j}): difference {diff:e}")]
    Asymmetric { i: usize, j: usize, diff: f64 },
    #[error("diagonal entry {i} is {value}, expected {expected}")]
    Diagonal { i: usize, value: f64, expected: f64 },
    #[error("no precomputed score for text {0:?}")]
    UnknownText(String),
    #[error("cannot build a matrix from zero texts")]
    Empty,
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("matrix file: {0}")]
    Parse(String),
}

pub type Result<T, E = SimilarityError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Jaccard,
    NliEntailment,
    NliContradiction,
}

impl SimilarityKind {
    pub const ALL: [SimilarityKind; 3] = [
        SimilarityKind::Jaccard,
        SimilarityKind::NliEntailment,
        SimilarityKind::NliContradiction,
    ];

    /// Value stored on the diagonal: a text fully entails itself and never
    /// contradicts itself.
    pub fn diagonal(self) -> f64 {
        match self {
            SimilarityKind::NliContradiction => 0.0,
            _ => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityKind::Jaccard => "jaccard",
            SimilarityKind::NliEntailment => "nli_entailment",
            SimilarityKind::NliContradiction => "nli_contradiction",
        }
    }
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SimilarityKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown similarity kind {s:?}"))
    }
}

/// Scores text pairs. Implementations must be deterministic for fixed inputs
/// and return exactly one `(p_ab, p_ba)` per input pair, in order.
pub trait SimilarityProvider: Send + Sync {
    fn kind(&self) -> SimilarityKind;

    fn score_pairs(&self, context: Option<&str>, pairs: &[(&str, &str)]) -> Result<Vec<(f64, f64)>>;
}

static CLAMPED_SCORES: AtomicUsize = AtomicUsize::new(0);

/// Number of out-of-range provider scores clamped into [0, 1] so far.
pub fn clamped_scores() -> usize {
    CLAMPED_SCORES.load(Ordering::SeqCst)
}

fn sanitize(score: f64, pair: usize) -> Result<f64> {
    if !score.is_finite() {
        return Err(SimilarityError::NonFinite { pair });
    }
    if !(0.0..=1.0).contains(&score) {
        CLAMPED_SCORES.fetch_add(1, Ordering::SeqCst);
        log::warn!("pair {pair}: provider score {score} outside [0, 1], clamping");
        return Ok(score.clamp(0.0, 1.0));
    }
    Ok(score)
}

fn score_symmetric(
    provider: &dyn SimilarityProvider,
    context: Option<&str>,
    pairs: &[(&str, &str)],
) -> Result<Vec<f64>> {
    let scores = provider.score_pairs(context, pairs)?;
    if scores.len() != pairs.len() {
        return Err(SimilarityError::LengthMismatch {
            expected: pairs.len(),
            got: scores.len(),
        });
    }
    scores
        .into_iter()
        .enumerate()
        .map(|(i, (ab, ba))| Ok((sanitize(ab, i)? + sanitize(ba, i)?) / 2.0))
        .collect()
}

/// Lowercased tokens split on whitespace and punctuation (any character that
/// is not alphanumeric). No stemming.
pub fn jaccard_tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Jaccard index of the two token sets; two empty sets score 1.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let ta = jaccard_tokens(a);
    let tb = jaccard_tokens(b);
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    let inter = ta.intersection(&tb).count();
    let union = ta.len() + tb.len() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, Default)]
pub struct JaccardProvider;

impl SimilarityProvider for JaccardProvider {
    fn kind(&self) -> SimilarityKind {
        SimilarityKind::Jaccard
    }

    fn score_pairs(&self, _context: Option<&str>, pairs: &[(&str, &str)]) -> Result<Vec<(f64, f64)>> {
        Ok(pairs
            .iter()
            .map(|(a, b)| {
                let s = jaccard(a, b);
                (s, s)
            })
            .collect())
    }
}

/// Wraps a provider and counts the pairs it is asked to score.
pub struct CountingProvider<P> {
    inner: P,
    pairs: Arc<AtomicUsize>,
}

impl<P: SimilarityProvider> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            pairs: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn pairs_scored(&self) -> usize {
        self.pairs.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.pairs.store(0, Ordering::SeqCst);
    }
}

impl<P: SimilarityProvider> SimilarityProvider for CountingProvider<P> {
    fn kind(&self) -> SimilarityKind {
        self.inner.kind()
    }

    fn score_pairs(&self, context: Option<&str>, pairs: &[(&str, &str)]) -> Result<Vec<(f64, f64)>> {
        self.pairs.fetch_add(pairs.len(), Ordering::SeqCst);
        self.inner.score_pairs(context, pairs)
    }
}

/// Answers pair queries from a stored matrix over a known list of texts.
/// A text that appears more than once resolves to its first position;
/// pairs of equal texts get the diagonal value.
#[derive(Debug, Clone)]
pub struct PrecomputedProvider {
    matrix: SimilarityMatrix,
    index: HashMap<String, usize>,
}

impl PrecomputedProvider {
    pub fn new(texts: &[String], matrix: SimilarityMatrix) -> Result<Self> {
        if texts.len() != matrix.n() {
            return Err(SimilarityError::Shape(format!(
                "{} texts for a {}x{} matrix",
                texts.len(),
                matrix.n(),
                matrix.n()
            )));
        }
        let mut index = HashMap::new();
        for (i, t) in texts.iter().enumerate() {
            index.entry(t.clone()).or_insert(i);
        }
        Ok(Self { matrix, index })
    }

    fn lookup(&self, text: &str) -> Result<usize> {
        self.index
            .get(text)
            .copied()
            .ok_or_else(|| SimilarityError::UnknownText(text.to_string()))
    }
}

impl SimilarityProvider for PrecomputedProvider {
    fn kind(&self) -> SimilarityKind {
        self.matrix.kind()
    }

    fn score_pairs(&self, context: Option<&str>, pairs: &[(&str, &str)]) -> Result<Vec<(f64, f64)>> {
        if let Some(expected) = self.matrix.context_sha256() {
            if context.map(sha256_hex).as_deref() != Some(expected) {
                return Err(SimilarityError::ContextMismatch);
            }
        }
        pairs
            .iter()
            .map(|(a, b)| {
                let v = self.matrix.get(self.lookup(a)?, self.lookup(b)?);
                Ok((v, v))
            })
            .collect()
    }
}

/// Square, symmetric matrix of one similarity kind. Values are stored
/// row-major and never modified after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    kind: SimilarityKind,
    values: Vec<f64>,
    context_sha256: Option<String>,
}

impl SimilarityMatrix {
    /// Validate and wrap row-major values. Diagonal entries must match the
    /// kind's convention within `tol`, as must the symmetry check.
    pub fn from_values(
        n: usize,
        kind: SimilarityKind,
        values: Vec<f64>,
        context_sha256: Option<String>,
        tol: f64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(SimilarityError::Empty);
        }
        if values.len() != n * n {
            return Err(SimilarityError::Shape(format!(
                "{} values for a {n}x{n} matrix",
                values.len()
            )));
        }
        for (k, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(SimilarityError::Range {
                    i: k / n,
                    j: k % n,
                    value,
                });
            }
        }
        for i in 0..n {
            for j in 0..n {
                let v = values[i * n + j];
                if j > i {
                    let diff = (v - values[j * n + i]).abs();
                    if diff > tol {
                        return Err(SimilarityError::Asymmetric { i, j, diff });
                    }
                }
            }
            let d = values[i * n + i];
            if (d - kind.diagonal()).abs() > tol {
                return Err(SimilarityError::Diagonal {
                    i,
                    value: d,
                    expected: kind.diagonal(),
                });
            }
        }
        Ok(Self {
            n,
            kind,
            values,
            context_sha256,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> SimilarityKind {
        self.kind
    }

    pub fn context_sha256(&self) -> Option<&str> {
        self.context_sha256.as_deref()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Conjugate by a permutation: entry `(i, j)` of the result is entry
    /// `(perm[i], perm[j])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n);
        let n = self.n;
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = self.get(perm[i], perm[j]);
            }
        }
        Self {
            values,
            ..self.clone()
        }
    }
}

fn check_provider(kind: SimilarityKind, provider: &dyn SimilarityProvider) -> Result<()> {
    if provider.kind() != kind {
        return Err(SimilarityError::KindMismatch {
            matrix: provider.kind(),
            requested: kind,
        });
    }
    Ok(())
}

/// Build the full matrix over `texts`, querying each unordered pair once.
pub fn build_matrix(
    texts: &[String],
    kind: SimilarityKind,
    provider: &dyn SimilarityProvider,
    context: Option<&str>,
) -> Result<SimilarityMatrix> {
    check_provider(kind, provider)?;
    let n = texts.len();
    if n == 0 {
        return Err(SimilarityError::Empty);
    }
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((texts[i].as_str(), texts[j].as_str()));
        }
    }
    let scores = if pairs.is_empty() {
        Vec::new()
    } else {
        score_symmetric(provider, context, &pairs)?
    };
    let mut values = vec![0.0; n * n];
    let mut next = scores.into_iter();
    for i in 0..n {
        values[i * n + i] = kind.diagonal();
        for j in i + 1..n {
            let v = next.next().expect("one score per pair");
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(SimilarityMatrix {
        n,
        kind,
        values,
        context_sha256: context.map(sha256_hex),
    })
}

/// Append `candidate` as a new last row/column, scoring only the `n` new
/// pairs. The leading block is copied unchanged.
pub fn extend_matrix(
    m: &SimilarityMatrix,
    texts: &[String],
    candidate: &str,
    provider: &dyn SimilarityProvider,
    context: Option<&str>,
) -> Result<SimilarityMatrix> {
    check_provider(m.kind, provider)?;
    if context.map(sha256_hex) != m.context_sha256 {
        return Err(SimilarityError::ContextMismatch);
    }
    let n = m.n;
    if texts.len() != n {
        return Err(SimilarityError::Shape(format!(
            "{} texts for a base matrix of size {n}",
            texts.len()
        )));
    }
    let pairs: Vec<(&str, &str)> = texts.iter().map(|t| (t.as_str(), candidate)).collect();
    let scores = score_symmetric(provider, context, &pairs)?;
    let size = n + 1;
    let mut values = vec![0.0; size * size];
    for i in 0..n {
        values[i * size..i * size + n].copy_from_slice(m.row(i));
        values[i * size + n] = scores[i];
        values[n * size + i] = scores[i];
    }
    values[n * size + n] = m.kind.diagonal();
    Ok(SimilarityMatrix {
        n: size,
        kind: m.kind,
        values,
        context_sha256: m.context_sha256.clone(),
    })
}
