use proptest::prelude::*;

use mcqa_eval::blackbox::{
    degree_confidence, eccentricity_scores, effective_similarity, BlackboxMethod, SpectralConfig,
};
use mcqa_eval::dataset::{subsample, McqItem};
use mcqa_eval::methods::Method;
use mcqa_eval::metrics::calibration::equal_mass_bins;
use mcqa_eval::metrics::{auarc, auroc, calibration_split, ece, fit_histogram_binning, rce};
use mcqa_eval::rng::SplitMix64;
use mcqa_eval::similarity::{build_matrix, JaccardProvider, SimilarityKind};
use mcqa_eval::studies::kendall_tau;
use mcqa_eval::studies::sweep::rank_methods;

/// Confidences on a coarse grid (to force ties) with both label classes.
fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec((0u32..15).prop_map(|k| f64::from(k) / 14.0), n),
            prop::collection::vec(0u8..2, n),
        )
            .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
    })
}

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 1..4)
            .prop_map(|w| w.join(" ")),
        2..8,
    )
}

proptest! {
    #[test]
    fn auroc_is_a_probability_and_flips_under_negation((conf, labels) in scored()) {
        let a = auroc(&conf, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let neg: Vec<f64> = conf.iter().map(|c| -c).collect();
        prop_assert!((auroc(&neg, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn auarc_lies_between_worst_and_best_order((conf, labels) in scored()) {
        let a = auarc(&conf, &labels).unwrap();
        let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        let best = auarc(&y, &labels).unwrap();
        let worst = auarc(&y.iter().map(|v| -v).collect::<Vec<_>>(), &labels).unwrap();
        prop_assert!(a <= best + 1e-12 && a >= worst - 1e-12);
    }

    #[test]
    fn ece_and_rce_are_bounded((conf, labels) in scored(), bins in 2usize..12) {
        let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        let e = ece(&conf, &y, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        let r = rce(&conf, &y, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn bins_cover_in_order_and_never_split_ties(
        mut values in prop::collection::vec((0u32..8).prop_map(f64::from), 1..80),
        bins in 1usize..10,
    ) {
        values.sort_by(f64::total_cmp);
        let ends = equal_mass_bins(&values, bins);
        prop_assert_eq!(*ends.last().unwrap(), values.len());
        prop_assert!(ends.len() <= bins);
        prop_assert!(ends.windows(2).all(|w| w[0] < w[1]));
        for &e in &ends[..ends.len() - 1] {
            prop_assert!(values[e - 1] != values[e]);
        }
    }

    #[test]
    fn calibrated_values_are_bin_rates((conf, labels) in scored(), bins in 1usize..8) {
        let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        let map = fit_histogram_binning(&conf, &y, bins).unwrap();
        for c in map.apply(&conf) {
            prop_assert!(map.rates.contains(&c));
        }
        prop_assert_eq!(map.counts.iter().sum::<usize>(), conf.len());
    }

    #[test]
    fn calibration_split_is_a_seeded_partition(n in 0usize..200, seed in any::<u64>()) {
        let (fit, eval) = calibration_split(n, seed);
        prop_assert_eq!(fit.len(), n / 2);
        let mut all: Vec<usize> = fit.iter().chain(&eval).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(calibration_split(n, seed), (fit, eval));
    }

    #[test]
    fn jaccard_matrix_is_symmetric_with_unit_diagonal(texts in words()) {
        let m = build_matrix(&texts, SimilarityKind::Jaccard, &JaccardProvider, None).unwrap();
        for i in 0..m.n() {
            prop_assert_eq!(m.get(i, i), 1.0);
            for j in 0..m.n() {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
                prop_assert!((0.0..=1.0).contains(&m.get(i, j)));
            }
        }
    }

    #[test]
    fn degree_and_eccentricity_are_bounded(texts in words()) {
        let m = build_matrix(&texts, SimilarityKind::Jaccard, &JaccardProvider, None).unwrap();
        let w = effective_similarity(&m);
        let ecc = eccentricity_scores(&w, &SpectralConfig::default()).unwrap();
        for (i, e) in ecc.iter().enumerate() {
            prop_assert!((0.0..=1.0).contains(&degree_confidence(&w, i)));
            prop_assert!(*e <= 0.0 && e.is_finite());
        }
    }

    #[test]
    fn kendall_tau_is_symmetric_and_bounded(seed in any::<u64>(), k in 2usize..12) {
        let base: Vec<Method> = Method::ALL[..k].to_vec();
        let mut other = base.clone();
        SplitMix64::new(seed).shuffle(&mut other);
        let t = kendall_tau(&base, &other);
        prop_assert!((-1.0..=1.0).contains(&t));
        prop_assert_eq!(t, kendall_tau(&other, &base));
        let mut rev = base.clone();
        rev.reverse();
        prop_assert_eq!(kendall_tau(&base, &rev), -1.0);
    }

    #[test]
    fn ranking_is_a_permutation_sorted_by_auroc(
        aurocs in prop::collection::vec(prop::option::of((0u32..5).prop_map(|k| f64::from(k) / 4.0)), 12),
    ) {
        let entries: Vec<(Method, Option<f64>)> = Method::ALL.iter().copied().zip(aurocs).collect();
        let ranked = rank_methods(&entries);
        prop_assert_eq!(ranked.len(), 12);
        let mut seen: Vec<Method> = ranked.iter().map(|r| r.method).collect();
        seen.sort();
        prop_assert_eq!(seen, Method::ALL.to_vec());
        for w in ranked.windows(2) {
            match (w[0].auroc, w[1].auroc) {
                (Some(a), Some(b)) => prop_assert!(a > b || (a == b && w[0].method.id() < w[1].method.id())),
                (None, Some(_)) => prop_assert!(false, "undefined ranked above defined"),
                (Some(_), None) => {}
                (None, None) => prop_assert!(w[0].method.id() < w[1].method.id()),
            }
        }
    }

    #[test]
    fn subsample_keeps_file_order(total in 1usize..40, frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let items: Vec<McqItem> = (0..total)
            .map(|i| McqItem {
                id: format!("i{i:03}"),
                dataset: "d".into(),
                context: None,
                question: format!("q{i}"),
                options: vec!["a".into(), "b".into()],
                correct_index: 0,
            })
            .collect();
        let n = (frac * total as f64) as usize;
        let sub = subsample(&items, n, seed).unwrap();
        prop_assert_eq!(sub.len(), n);
        prop_assert!(sub.windows(2).all(|w| w[0].id < w[1].id));
        prop_assert_eq!(subsample(&items, n, seed).unwrap(), sub);
        prop_assert!(subsample(&items, total + 1, seed).is_err());
    }

    #[test]
    fn contradiction_weights_invert_off_diagonal(texts in words()) {
        let m = build_matrix(&texts, SimilarityKind::Jaccard, &JaccardProvider, None).unwrap();
        let n = m.n();
        let inverted: Vec<f64> = (0..n * n)
            .map(|k| if k / n == k % n { 0.0 } else { 1.0 - m.values()[k] })
            .collect();
        let c = mcqa_eval::similarity::SimilarityMatrix::from_values(
            n, SimilarityKind::NliContradiction, inverted, None, 1e-12,
        ).unwrap();
        let w = effective_similarity(&c);
        for i in 0..n {
            for j in 0..n {
                prop_assert!((w.get(i, j) - m.get(i, j)).abs() < 1e-12);
            }
        }
        prop_assert_eq!(BlackboxMethod::DegC.kind(), SimilarityKind::NliContradiction);
    }
}
