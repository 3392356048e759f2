//! Acceptance suite: one PASS/FAIL line per criterion, with the tolerance
//! each check uses and its runtime. Exits non-zero if any check fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use mcqa_eval::blackbox::spectral::{centroid_scores, spectral_embedding};
use mcqa_eval::blackbox::{
    degree_confidence, eccentricity_scores, effective_similarity, score_candidates, BlackboxMethod,
    CandidateScorer, Dense, SpectralConfig,
};
use mcqa_eval::gateway::http::network_calls;
use mcqa_eval::gateway::{TokenLogprob, TokenLogprobSeq};
use mcqa_eval::methods::Method;
use mcqa_eval::metrics::{auarc, auroc, ece, fit_histogram_binning, rce, MetricError};
use mcqa_eval::rng::SplitMix64;
use mcqa_eval::similarity::matrix_file::load_precomputed;
use mcqa_eval::similarity::{
    build_matrix, CountingProvider, JaccardProvider, PrecomputedProvider, SimilarityKind,
    SimilarityProvider,
};
use mcqa_eval::studies::noise::synthetic_units;
use mcqa_eval::studies::report::{MethodStatus, MetricReport};
use mcqa_eval::studies::{noise_study, run_pipeline, threshold_sweep, NoiseStudyConfig, RunConfig, StudyUnit};
use mcqa_eval::whitebox::{csl, perplexity_conf, sl, token_sar, RelevanceWeights};

type Check = fn() -> Result<(), String>;
type Transform = fn(f64) -> f64;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, || format!("{what}: {a} vs {b} (tol {tol:e})"))
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

// ---------------------------------------------------------------- oracles

/// Fraction of (positive, negative) pairs ordered correctly, ties one half.
fn auroc_pairs(conf: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &ci) in conf.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &cj) in conf.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            den += 1.0;
            if ci > cj {
                num += 1.0;
            } else if ci == cj {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Mean over k of the accuracy of the k most confident units, each top-k
/// set found by repeated selection of the earliest maximum.
fn auarc_direct(conf: &[f64], labels: &[u8]) -> f64 {
    let n = conf.len();
    let mut taken = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if !taken[i] && best.is_none_or(|b| conf[i] > conf[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("remaining unit");
        taken[b] = true;
        order.push(b);
    }
    let mut total = 0.0;
    for k in 1..=n {
        let correct: u32 = order[..k].iter().map(|&i| u32::from(labels[i])).sum();
        total += f64::from(correct) / k as f64;
    }
    total / n as f64
}

/// `P(x' >= x)`-style upper count with ties one half, self included.
fn upper(values: &[f64], x: f64) -> f64 {
    values
        .iter()
        .map(|&v| if v > x { 1.0 } else if v == x { 0.5 } else { 0.0 })
        .sum()
}

fn random_instance(rng: &mut SplitMix64, max_n: u64, levels: u64) -> (Vec<f64>, Vec<u8>) {
    loop {
        let n = 2 + rng.next_below(max_n - 1) as usize;
        let conf: Vec<f64> = (0..n).map(|_| rng.next_below(levels) as f64 / levels as f64).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.next_below(2) as u8).collect();
        if labels.contains(&0) && labels.contains(&1) {
            return (conf, labels);
        }
    }
}

// ---------------------------------------------------------------- checks

fn auroc_oracle() -> Result<(), String> {
    let start = Instant::now();
    let mut rng = SplitMix64::new(1);
    for case in 0..200 {
        let (conf, labels) = random_instance(&mut rng, 50, 12);
        let got = auroc(&conf, &labels).map_err(|e| e.to_string())?;
        close(got, auroc_pairs(&conf, &labels), 1e-9, &format!("case {case}"))?;
    }
    for labels in [vec![1u8, 1, 1], vec![0, 0, 0]] {
        match auroc(&[0.1, 0.2, 0.3], &labels) {
            Err(MetricError::UndefinedAuroc { .. }) => {}
            other => return Err(format!("single-class input gave {other:?}")),
        }
    }
    within(start.elapsed(), Duration::from_secs(1))
}

fn auarc_oracle() -> Result<(), String> {
    let mut rng = SplitMix64::new(1);
    for case in 0..200 {
        let (conf, labels) = random_instance(&mut rng, 50, 12);
        let got = auarc(&conf, &labels).map_err(|e| e.to_string())?;
        let want = auarc_direct(&conf, &labels);
        ensure(got == want, || format!("case {case}: {got} vs {want}"))?;
    }
    let all = auarc(&[0.3, 0.9, 0.1, 0.5], &[1, 1, 1, 1]).map_err(|e| e.to_string())?;
    ensure(all == 1.0, || format!("all-correct AUARC {all}"))
}

fn calibration_ece() -> Result<(), String> {
    let err = |e: MetricError| e.to_string();
    let mut rng = SplitMix64::new(5);
    for case in 0..50 {
        let (conf, labels) = random_instance(&mut rng, 60, 30);
        let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        let bins = 1 + rng.next_below(10) as usize;
        let map = fit_histogram_binning(&conf, &y, bins).map_err(err)?;
        let e = ece(&map.apply(&conf), &y, bins).map_err(err)?;
        ensure(e == 0.0, || format!("case {case}: fit==eval ECE {e} with B={bins}"))?;

        let global = y.iter().sum::<f64>() / y.len() as f64;
        let one = fit_histogram_binning(&conf, &y, 1).map_err(err)?;
        ensure(one.apply(&conf).iter().all(|&c| c == global), || format!("case {case}: B=1 map"))?;
    }
    // Ten points, two equal-mass bins on raw confidence:
    // bin 1: conf 0.05..0.45 mean 0.25, accuracy 2/5, gap 0.15
    // bin 2: conf 0.55..0.95 mean 0.75, accuracy 4/5, gap 0.05
    // ECE = 0.5 * 0.15 + 0.5 * 0.05 = 0.1
    let conf = [0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95];
    let y = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
    close(ece(&conf, &y, 2).map_err(err)?, 0.1, 1e-12, "10-point ECE, B=2")?;
    // Fit B=5 (pairs), rates 0.5 0.5 0.5 0.5 1.0; evaluated with B=5 on
    // the calibrated values 0.5 (x8) and 1.0 (x2): both gaps are zero.
    let map = fit_histogram_binning(&conf, &y, 5).map_err(err)?;
    let cal = map.apply(&conf);
    ensure(cal == [0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 1.0, 1.0], || format!("calibrated {cal:?}"))?;
    close(ece(&cal, &y, 5).map_err(err)?, 0.0, 1e-12, "10-point calibrated ECE")?;
    // Calibrated on the first five (rate 0.4), evaluated on all ten with
    // B=1: |0.4 - 0.6| = 0.2.
    let fit = fit_histogram_binning(&conf[..5], &y[..5], 1).map_err(err)?;
    let cal = fit.apply(&conf);
    close(ece(&cal, &y, 1).map_err(err)?, (0.4f64 - 0.6).abs(), 1e-12, "10-point cross ECE, B=1")
}

fn rce_check() -> Result<(), String> {
    let err = |e: MetricError| e.to_string();
    // Strictly increasing regression: every point in its own bin.
    let n = 20;
    let conf: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    let f: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / (n as f64 + 1.0)).collect();
    let r = rce(&conf, &f, n).map_err(err)?;
    ensure(r <= 1.0 / (2.0 * n as f64), || format!("monotone RCE {r}"))?;

    // Eight points, four bins of two in sorted order.
    let conf = [0.9, 0.1, 0.4, 0.7, 0.3, 0.8, 0.2, 0.6];
    let y = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let mut order: Vec<usize> = (0..8).collect();
    order.sort_by(|&a, &b| conf[a].partial_cmp(&conf[b]).expect("finite"));
    let mut reg = [0.0; 8];
    for pair in order.chunks(2) {
        let m = (y[pair[0]] + y[pair[1]]) / 2.0;
        reg[pair[0]] = m;
        reg[pair[1]] = m;
    }
    let nf = 8.0;
    let want: f64 = (0..8)
        .map(|i| ((upper(&reg, reg[i]) - upper(&conf, conf[i])) / nf).abs())
        .sum::<f64>()
        / nf;
    close(rce(&conf, &y, 4).map_err(err)?, want, 1e-12, "8-point RCE")
}

struct IncrementalFixture {
    samples: Vec<String>,
    options: Vec<String>,
    texts: Vec<String>,
}

fn incremental_fixture() -> IncrementalFixture {
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixtures().join("incremental/texts.json")).expect("texts")).expect("json");
    let list = |k: &str| -> Vec<String> {
        v[k].as_array()
            .expect("array")
            .iter()
            .map(|s| s.as_str().expect("string").to_string())
            .collect()
    };
    let samples = list("samples");
    let options = list("options");
    let texts = samples.iter().chain(&options).cloned().collect();
    IncrementalFixture {
        samples,
        options,
        texts,
    }
}

fn incremental_provider(kind: SimilarityKind, texts: &[String]) -> PrecomputedProvider {
    let m = load_precomputed(&fixtures().join(format!("incremental/{kind}.txt"))).expect("matrix");
    PrecomputedProvider::new(texts, m).expect("provider")
}

fn check_incremental<P: SimilarityProvider>(fx: &IncrementalFixture, inner: P) -> Result<(), String> {
    let cfg = SpectralConfig::default();
    let n = fx.samples.len();
    let kind = inner.kind();
    let counting = CountingProvider::new(inner);
    let scorer = CandidateScorer::new(&fx.samples, &counting, None).map_err(|e| e.to_string())?;
    ensure(counting.pairs_scored() == n * (n - 1) / 2, || "base matrix pair count".into())?;
    for cand in &fx.options {
        counting.reset();
        let ext = scorer.extended(cand).map_err(|e| e.to_string())?;
        ensure(counting.pairs_scored() == n, || {
            format!("{kind}: {} pairs for one option", counting.pairs_scored())
        })?;
        let mut all = fx.samples.clone();
        all.push(cand.clone());
        let full = build_matrix(&all, kind, &counting, None).map_err(|e| e.to_string())?;
        for (a, b) in ext.values().iter().zip(full.values()) {
            close(*a, *b, 1e-10, "extended vs rebuilt matrix")?;
        }
    }
    for method in BlackboxMethod::ALL.into_iter().filter(|m| m.kind() == kind) {
        let inc = score_candidates(&fx.samples, &fx.options, method, &counting, None, &cfg)
            .map_err(|e| e.to_string())?;
        for (cand, got) in fx.options.iter().zip(inc) {
            let mut all = fx.samples.clone();
            all.push(cand.clone());
            let w = effective_similarity(&build_matrix(&all, kind, &counting, None).map_err(|e| e.to_string())?);
            let want = if method.is_degree() {
                degree_confidence(&w, n)
            } else {
                eccentricity_scores(&w, &cfg).map_err(|e| e.to_string())?[n]
            };
            close(got, want, 1e-10, &format!("{method:?}"))?;
        }
    }
    Ok(())
}

fn incremental_scoring() -> Result<(), String> {
    let fx = incremental_fixture();
    check_incremental(&fx, JaccardProvider)?;
    check_incremental(&fx, incremental_provider(SimilarityKind::NliEntailment, &fx.texts))?;
    check_incremental(&fx, incremental_provider(SimilarityKind::NliContradiction, &fx.texts))
}

/// Entailment 1 (contradiction 0) for equal texts, 0.5 otherwise.
struct IdentityNli(SimilarityKind);

impl SimilarityProvider for IdentityNli {
    fn kind(&self) -> SimilarityKind {
        self.0
    }

    fn score_pairs(&self, _c: Option<&str>, pairs: &[(&str, &str)]) -> mcqa_eval::similarity::Result<Vec<(f64, f64)>> {
        Ok(pairs
            .iter()
            .map(|(a, b)| {
                let v = if a == b { self.0.diagonal() } else { 0.5 };
                (v, v)
            })
            .collect())
    }
}

fn blackbox_invariants() -> Result<(), String> {
    let fx = incremental_fixture();
    let cfg = SpectralConfig::default();
    let mut rng = SplitMix64::new(9);
    for method in BlackboxMethod::ALL {
        let provider: Box<dyn SimilarityProvider> = match method.kind() {
            SimilarityKind::Jaccard => Box::new(JaccardProvider),
            k => Box::new(incremental_provider(k, &fx.texts)),
        };
        let base = score_candidates(&fx.samples, &fx.options, method, provider.as_ref(), None, &cfg)
            .map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let mut perm = fx.samples.clone();
            rng.shuffle(&mut perm);
            let got = score_candidates(&perm, &fx.options, method, provider.as_ref(), None, &cfg)
                .map_err(|e| e.to_string())?;
            for (a, b) in got.iter().zip(&base) {
                close(*a, *b, 1e-10, &format!("{method:?} under sample permutation"))?;
            }
        }

        let same = vec!["the heart".to_string(); 5];
        let cands = vec!["the heart".to_string(); 4];
        let provider: Box<dyn SimilarityProvider> = match method.kind() {
            SimilarityKind::Jaccard => Box::new(JaccardProvider),
            k => Box::new(IdentityNli(k)),
        };
        let scores = score_candidates(&same, &cands, method, provider.as_ref(), None, &cfg)
            .map_err(|e| e.to_string())?;
        let want = if method.is_degree() { 1.0 } else { 0.0 };
        for s in scores {
            close(s, want, 1e-12, &format!("{method:?} on identical responses"))?;
        }
    }

    for trial in 0..5 {
        let n = 6 + trial;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
            for j in i + 1..n {
                let v = 0.05 + 0.9 * rng.next_f64();
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        let w = Dense::new(n, data);
        let emb = spectral_embedding(&w, cfg.eigenvalue_cutoff, cfg.min_embedding_dims).map_err(|e| e.to_string())?;
        let base = centroid_scores(&emb);
        for _ in 0..50 {
            let signs: Vec<f64> = (0..emb[0].len())
                .map(|_| if rng.next_below(2) == 0 { -1.0 } else { 1.0 })
                .collect();
            let flipped: Vec<Vec<f64>> = emb
                .iter()
                .map(|row| row.iter().zip(&signs).map(|(x, s)| x * s).collect())
                .collect();
            for (a, b) in centroid_scores(&flipped).iter().zip(&base) {
                close(*a, *b, 1e-12, "eccentricity under eigenvector sign flips")?;
            }
        }
    }
    Ok(())
}

fn whitebox_reductions() -> Result<(), String> {
    let mut rng = SplitMix64::new(17);
    for case in 0..100 {
        let t = 1 + rng.next_below(40) as usize;
        let lps: Vec<f64> = (0..t).map(|_| -5.0 * rng.next_f64() - 1e-3).collect();
        let seq = TokenLogprobSeq::from_logprobs(&lps);
        let e = |x: mcqa_eval::whitebox::WhiteboxError| x.to_string();
        let ppl = perplexity_conf(&seq).map_err(e)?;
        let total = sl(&seq).map_err(e)?;
        let uniform = RelevanceWeights {
            weights: vec![1.0; t],
            kind: SimilarityKind::Jaccard,
            fallback: false,
        };
        close(token_sar(&seq, &uniform).map_err(e)?, ppl, 1e-12, &format!("case {case}: TokenSAR"))?;
        close(ppl, total / t as f64, 1e-12, &format!("case {case}: SL / T"))?;
        let a = 0.1 + rng.next_f64();
        let attended = TokenLogprobSeq {
            tokens: lps
                .iter()
                .map(|&lp| TokenLogprob {
                    attention_weight: Some(a),
                    ..TokenLogprob::new("x", lp)
                })
                .collect(),
            channel: Some("csl".into()),
        };
        close(csl(&attended).map_err(e)?, ppl, 1e-12, &format!("case {case}: CSL"))?;
    }
    Ok(())
}

fn rank_invariance() -> Result<(), String> {
    let mut rng = SplitMix64::new(23);
    let affine: Transform = |x| 2.0 * x + 1.0;
    let transforms = [("2x+1", affine), ("tanh", f64::tanh as Transform)];
    for case in 0..50 {
        let (base, labels) = random_instance(&mut rng, 60, 1 << 20);
        let conf: Vec<f64> = base.iter().map(|c| 4.0 * c - 2.0).collect();
        let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        let metrics = |c: &[f64]| -> Result<[f64; 3], String> {
            Ok([
                auroc(c, &labels).map_err(|e| e.to_string())?,
                auarc(c, &labels).map_err(|e| e.to_string())?,
                rce(c, &y, 10).map_err(|e| e.to_string())?,
            ])
        };
        let before = metrics(&conf)?;
        for (name, f) in transforms {
            let t: Vec<f64> = conf.iter().map(|&c| f(c)).collect();
            let after = metrics(&t)?;
            for (k, metric) in ["AUROC", "AUARC", "RCE"].iter().enumerate() {
                close(after[k], before[k], 1e-12, &format!("case {case}: {metric} under {name}"))?;
            }
        }
    }
    Ok(())
}

fn golden_report() -> MetricReport {
    let text = fs::read_to_string(fixtures().join("offline/golden/report.json")).expect("golden report");
    MetricReport::from_json(&text).expect("golden parses")
}

/// Three correctness levels; at τ = 0.5 the mid level counts as correct, at
/// τ = 0.9 it does not. Method A orders low < high < mid, method B orders
/// mid < low < high, so A is perfect at 0.5 and B at 0.9.
fn adversarial_units() -> Vec<StudyUnit> {
    let levels = [(0.3, 0.1, 0.5), (0.7, 0.9, 0.2), (0.95, 0.8, 0.9)];
    let mut units = Vec::new();
    for (g, &(corr, a, b)) in levels.iter().enumerate() {
        for k in 0..4 {
            let j = 0.001 * k as f64;
            let conf: BTreeMap<Method, f64> = [
                (Method::Sl, a + j),
                (Method::PTrue, b + j),
                (Method::DegJ, a + j),
                (Method::EccJ, b + j),
            ]
            .into_iter()
            .collect();
            units.push(StudyUnit {
                id: format!("g{g}u{k}"),
                correctness: corr,
                confidences: conf,
            });
        }
    }
    units
}

fn threshold_sensitivity() -> Result<(), String> {
    let units = adversarial_units();
    let oracle = |m: Method, tau: f64| {
        let conf: Vec<f64> = units.iter().map(|u| u.confidences[&m]).collect();
        let labels: Vec<u8> = units.iter().map(|u| u8::from(u.correctness > tau)).collect();
        auroc_pairs(&conf, &labels)
    };
    let reference = golden_report().blocks[0].ranking.clone();
    let table = threshold_sweep(&units, &[0.9, 0.5], Some(reference));
    ensure(table.rows.len() == 3, || format!("{} rows", table.rows.len()))?;
    for (row, tau) in table.rows.iter().zip([0.5, 0.9]) {
        ensure(row.tau == Some(tau), || format!("row τ {:?}, expected {tau}", row.tau))?;
        for r in row.blackbox.iter().chain(&row.whitebox) {
            let want = oracle(r.method, tau);
            close(r.auroc.ok_or("undefined AUROC")?, want, 1e-12, &format!("{} at τ={tau}", r.method))?;
        }
    }
    let (lo, hi) = (&table.rows[0], &table.rows[1]);
    ensure(lo.whitebox[0].method == Method::Sl && hi.whitebox[0].method == Method::PTrue, || {
        "white-box ranking did not flip".into()
    })?;
    ensure(lo.blackbox[0].method == Method::DegJ && hi.blackbox[0].method == Method::EccJ, || {
        "black-box ranking did not flip".into()
    })?;
    ensure(table.rows[2].pipeline == "MCQA-Eval" && table.rows[2].tau.is_none(), || {
        "reference row".into()
    })?;

    let md = table.to_markdown();
    let lines: Vec<&str> = md.lines().collect();
    let expect_prefix = [
        "| Pipeline | τ | 1 | 2 | 3 | 4 | 5 | 6 |",
        "|---|---|---|---|---|---|---|---|",
        "| **Black-box** |",
        "| Baseline | 0.5 | Deg(J) | Ecc(J) |",
        "| Baseline | 0.9 | Ecc(J) | Deg(J) |",
        "| MCQA-Eval | N/A |",
        "| **White-box** |",
        "| Baseline | 0.5 | SL | P(true) |",
        "| Baseline | 0.9 | P(true) | SL |",
        "| MCQA-Eval | N/A |",
    ];
    ensure(lines.len() == expect_prefix.len(), || format!("table has {} lines:\n{md}", lines.len()))?;
    for (line, want) in lines.iter().zip(expect_prefix) {
        ensure(line.starts_with(want), || format!("line {line:?} does not start with {want:?}"))?;
    }
    Ok(())
}

fn noise_reproduction() -> Result<(), String> {
    let start = Instant::now();
    let units = synthetic_units(300, 0);
    let sigmas = vec![0.0, 0.5, 1.0, 2.0, 5.0, 50.0];
    let cfg = NoiseStudyConfig {
        sigmas: sigmas.clone(),
        seeds: (0..100).collect(),
        ..Default::default()
    };
    let report = noise_study(&units, &cfg).map_err(|e| e.to_string())?;
    let s = &report.summary;
    ensure(s[0].sigma == 0.0 && s[0].mean_kendall_tau == 1.0, || format!("σ=0 mean τ {}", s[0].mean_kendall_tau))?;
    ensure(
        report.rows.iter().filter(|r| r.sigma == 0.0).all(|r| r.kendall_tau == 1.0),
        || "σ=0 draw with τ != 1".into(),
    )?;
    for w in s[..5].windows(2) {
        let slack = w[0].std_error.max(w[1].std_error);
        ensure(w[1].mean_kendall_tau <= w[0].mean_kendall_tau + slack, || {
            format!(
                "mean τ rises from {} (σ={}) to {} (σ={})",
                w[0].mean_kendall_tau, w[0].sigma, w[1].mean_kendall_tau, w[1].sigma
            )
        })?;
    }
    let k = report.clean_ranking.len() as f64;
    let null_sd = (2.0 * (2.0 * k + 5.0) / (9.0 * k * (k - 1.0)) / cfg.seeds.len() as f64).sqrt();
    let last = s.last().expect("σ=50");
    ensure(last.mean_kendall_tau.abs() <= 3.0 * null_sd, || {
        format!("σ=50 mean τ {} outside ±{}", last.mean_kendall_tau, 3.0 * null_sd)
    })?;
    within(start.elapsed(), Duration::from_secs(30))
}

fn offline_end_to_end() -> Result<(), String> {
    let start = Instant::now();
    let cfg_path = fixtures().join("offline/config.toml");
    let golden = fs::read_to_string(fixtures().join("offline/golden/report.json")).map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;

    let run_cli = |out: &Path| -> Result<String, String> {
        let status = Command::new(env!("CARGO_BIN_EXE_mcqa-eval"))
            .arg("run")
            .arg("--config")
            .arg(&cfg_path)
            .arg("--out")
            .arg(out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || {
            format!("run exited {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr))
        })?;
        fs::read_to_string(out.join("report.json")).map_err(|e| e.to_string())
    };
    let first = run_cli(&tmp.path().join("a"))?;
    let second = run_cli(&tmp.path().join("b"))?;
    ensure(first == second, || "two runs differ".into())?;
    ensure(first == golden, || "run differs from the golden report".into())?;

    let before = network_calls();
    let cfg = RunConfig::load(&cfg_path).map_err(|e| e.to_string())?;
    let (_, report) = run_pipeline(&cfg, &tmp.path().join("lib")).map_err(|e| e.to_string())?;
    ensure(network_calls() == before, || "network calls during replay".into())?;
    ensure(report.to_json().map_err(|e| e.to_string())? == golden, || "library run differs".into())?;

    let block = &report.blocks[0];
    for m in Method::ALL {
        let mm = block.method(m).ok_or_else(|| format!("{m} missing"))?;
        ensure(mm.status == MethodStatus::Ok && mm.auroc.is_some() && mm.n_scored > 0, || {
            format!("{m}: {:?}", mm.status)
        })?;
    }
    within(start.elapsed(), Duration::from_secs(60))
}

fn main() {
    let checks: [(&str, &str, Check); 11] = [
        ("AUROC oracle (200 instances, <1 s)", "1e-9", auroc_oracle),
        ("AUARC oracle (200 instances)", "exact", auarc_oracle),
        ("Calibration/ECE", "exact / 1e-12", calibration_ece),
        ("RCE", "1/(2N) / 1e-12", rce_check),
        ("Incremental candidate scoring equivalence", "1e-10", incremental_scoring),
        ("Black-box invariants", "1e-10 / 1e-12", blackbox_invariants),
        ("White-box reductions (100 sequences)", "1e-12", whitebox_reductions),
        ("Metric rank invariance (50 instances)", "1e-12", rank_invariance),
        ("Threshold-sensitivity ranking flip", "1e-12", threshold_sensitivity),
        ("Noise-study ranking stability (<30 s)", "1 SE / 3 null SD", noise_reproduction),
        ("Offline end-to-end replay (<60 s)", "byte-identical", offline_end_to_end),
    ];
    let mut failed = 0;
    for (name, tol, check) in checks {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let ms = start.elapsed().as_millis();
        match outcome {
            Ok(()) => println!("PASS  {name}  [tol {tol}]  {ms} ms"),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name}  [tol {tol}]  {ms} ms: {e}");
            }
        }
    }
    println!("{} of {} criteria passed", 11 - failed, 11);
    if failed > 0 {
        std::process::exit(1);
    }
}
