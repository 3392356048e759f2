//! Label-noise study: perturb continuous correctness before thresholding
//! and measure how far the method ranking moves.
//!
//! Noise is added in logit space, `label = logit(f) + ε > logit(τ)` with
//! `f` clamped to `[δ, 1 − δ]`, so σ = 0 reproduces the clean labels
//! exactly and large σ drives labels towards coin flips.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::sweep::{auroc_at, rank_methods, unit_methods};
use super::{Result, StudyError, StudyUnit};
use crate::methods::Method;
use crate::metrics::threshold_label;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseStudyConfig {
    pub sigmas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub threshold: f64,
    pub clamp_delta: f64,
}

impl Default for NoiseStudyConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0],
            seeds: (0..100).collect(),
            threshold: 0.5,
            clamp_delta: 1e-6,
        }
    }
}

impl NoiseStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(StudyError::Config("sigmas must be finite and >= 0".into()));
        }
        if self.seeds.is_empty() {
            return Err(StudyError::Config("noise study needs at least one seed".into()));
        }
        if !(self.clamp_delta > 0.0 && self.clamp_delta < 0.5) {
            return Err(StudyError::Config("clamp_delta must be in (0, 0.5)".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(StudyError::Config("noise threshold must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One artifact row: a method's AUROC in one noisy draw, and the Kendall τ
/// of that draw's ranking against the clean ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub sigma: f64,
    pub seed: u64,
    pub method: Method,
    pub auroc: Option<f64>,
    pub kendall_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSummary {
    pub sigma: f64,
    pub mean_kendall_tau: f64,
    pub std_error: f64,
    pub draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub config: NoiseStudyConfig,
    pub clean_ranking: Vec<Method>,
    pub clean_auroc: BTreeMap<Method, Option<f64>>,
    pub rows: Vec<NoiseRow>,
    pub summary: Vec<NoiseSummary>,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Kendall rank correlation between two orderings of the same items:
/// (concordant − discordant) / (k (k − 1) / 2). One item gives 1.
pub fn kendall_tau(a: &[Method], b: &[Method]) -> f64 {
    let k = a.len();
    assert_eq!(k, b.len(), "rankings must have equal length");
    if k < 2 {
        return 1.0;
    }
    let pos: BTreeMap<Method, usize> = b.iter().enumerate().map(|(i, &m)| (m, i)).collect();
    let mut score = 0i64;
    for i in 0..k {
        for j in i + 1..k {
            // a ranks a[i] above a[j]; concordant if b agrees.
            if pos[&a[i]] < pos[&a[j]] {
                score += 1;
            } else {
                score -= 1;
            }
        }
    }
    score as f64 / (k * (k - 1) / 2) as f64
}

/// Labels after adding `sigma`-scaled standard normal noise drawn from
/// `seed`, one draw per unit in order.
pub fn noisy_labels(units: &[StudyUnit], sigma: f64, seed: u64, cfg: &NoiseStudyConfig) -> Vec<u8> {
    let d = cfg.clamp_delta;
    let cut = logit(cfg.threshold);
    let mut rng = SplitMix64::new(seed);
    units
        .iter()
        .map(|u| {
            let eps = sigma * rng.next_normal();
            if sigma == 0.0 {
                return threshold_label(u.correctness, cfg.threshold);
            }
            u8::from(logit(u.correctness.clamp(d, 1.0 - d)) + eps > cut)
        })
        .collect()
}

fn ranking(units: &[StudyUnit], methods: &[Method], labels: &[u8]) -> (Vec<Method>, BTreeMap<Method, Option<f64>>) {
    let entries: Vec<(Method, Option<f64>)> = methods.iter().map(|&m| (m, auroc_at(units, m, labels))).collect();
    let order = rank_methods(&entries).into_iter().map(|r| r.method).collect();
    (order, entries.into_iter().collect())
}

pub fn noise_study(units: &[StudyUnit], cfg: &NoiseStudyConfig) -> Result<NoiseReport> {
    cfg.validate()?;
    if units.iter().any(|u| !(0.0..=1.0).contains(&u.correctness)) {
        return Err(StudyError::Config("noise study needs correctness in [0, 1]".into()));
    }
    let methods = unit_methods(units);
    if methods.is_empty() {
        return Err(StudyError::Config("noise study needs scored units".into()));
    }
    let clean: Vec<u8> = units.iter().map(|u| threshold_label(u.correctness, cfg.threshold)).collect();
    let (clean_ranking, clean_auroc) = ranking(units, &methods, &clean);
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &sigma in &cfg.sigmas {
        let mut taus = Vec::with_capacity(cfg.seeds.len());
        for &seed in &cfg.seeds {
            let labels = noisy_labels(units, sigma, seed, cfg);
            let (order, aurocs) = ranking(units, &methods, &labels);
            let tau = kendall_tau(&clean_ranking, &order);
            taus.push(tau);
            for (method, auroc) in aurocs {
                rows.push(NoiseRow {
                    sigma,
                    seed,
                    method,
                    auroc,
                    kendall_tau: tau,
                });
            }
        }
        let n = taus.len() as f64;
        let mean = taus.iter().sum::<f64>() / n;
        let var = if taus.len() > 1 {
            taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        summary.push(NoiseSummary {
            sigma,
            mean_kendall_tau: mean,
            std_error: (var / n).sqrt(),
            draws: taus.len(),
        });
    }
    Ok(NoiseReport {
        config: cfg.clone(),
        clean_ranking,
        clean_auroc,
        rows,
        summary,
    })
}

impl NoiseReport {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("sigma,seed,method,auroc,kendall_tau\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.sigma,
                r.seed,
                r.method,
                r.auroc.map(|a| a.to_string()).unwrap_or_default(),
                r.kendall_tau
            ));
        }
        out
    }

    pub fn summary_markdown(&self) -> String {
        let mut out = String::from("| σ | mean Kendall τ | std. error | draws |\n|---|---|---|---|\n");
        for s in &self.summary {
            out.push_str(&format!(
                "| {} | {:.4} | {:.4} | {} |\n",
                s.sigma, s.mean_kendall_tau, s.std_error, s.draws
            ));
        }
        out
    }
}

/// A deterministic synthetic study population: `n` units whose continuous
/// correctness is spread over (0, 1), and methods whose confidences track
/// correctness with decreasing fidelity, so the clean ranking is strict.
pub fn synthetic_units(n: usize, seed: u64) -> Vec<StudyUnit> {
    let methods = [
        (Method::PTrue, 0.2),
        (Method::Sl, 0.6),
        (Method::Perplexity, 1.0),
        (Method::TokenSar, 1.6),
        (Method::Csl, 2.5),
        (Method::CslNext, 4.0),
    ];
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|i| {
            let z = rng.next_normal() * 1.5;
            let correctness = 1.0 / (1.0 + (-z).exp());
            let confidences = methods
                .iter()
                .map(|&(m, noise)| (m, z + noise * rng.next_normal()))
                .collect();
            StudyUnit {
                id: format!("u{i:04}"),
                correctness,
                confidences,
            }
        })
        .collect()
}
