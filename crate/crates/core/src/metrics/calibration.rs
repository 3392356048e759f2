//! Equal-mass binning, histogram-binning calibration, ECE and RCE.
//!
//! All three share one binning rule over sorted values: when there are at
//! most `B` distinct values each gets its own bin; otherwise cuts are placed
//! at `floor(b * N / B)` and moved forward past runs of equal values, so tied
//! values never straddle a bin boundary.

use serde::{Deserialize, Serialize};

use super::{check_finite, MetricError, Result};
use crate::rng::SplitMix64;

/// Exclusive end offsets of each bin over an ascending slice.
pub fn equal_mass_bins(sorted: &[f64], bins: usize) -> Vec<usize> {
    let n = sorted.len();
    if n == 0 {
        return Vec::new();
    }
    let mut run_ends: Vec<usize> = (1..n).filter(|&i| sorted[i] != sorted[i - 1]).collect();
    run_ends.push(n);
    if run_ends.len() <= bins {
        return run_ends;
    }
    let mut ends = Vec::with_capacity(bins);
    for b in 1..bins {
        let mut cut = b * n / bins;
        while cut > 0 && cut < n && sorted[cut] == sorted[cut - 1] {
            cut += 1;
        }
        if cut > 0 && cut < n && ends.last() != Some(&cut) {
            ends.push(cut);
        }
    }
    ends.push(n);
    ends
}

fn sorted_pairs(values: &[f64], targets: &[f64]) -> Vec<(f64, f64)> {
    let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(targets.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

fn mean(values: impl Iterator<Item = f64>, count: usize) -> f64 {
    values.sum::<f64>() / count as f64
}

/// Histogram-binning calibration fitted on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    /// Largest raw confidence in each bin, non-decreasing.
    pub upper_edges: Vec<f64>,
    /// Empirical correctness rate of each bin.
    pub rates: Vec<f64>,
    pub counts: Vec<usize>,
    pub requested_bins: usize,
}

impl CalibrationMap {
    pub fn bins(&self) -> usize {
        self.rates.len()
    }

    /// Rate of the first bin whose upper edge is at least `c`; confidences
    /// above every edge use the last bin.
    pub fn apply_one(&self, c: f64) -> f64 {
        let b = self.upper_edges.partition_point(|&edge| edge < c);
        self.rates[b.min(self.rates.len() - 1)]
    }

    pub fn apply(&self, confidences: &[f64]) -> Vec<f64> {
        confidences.iter().map(|&c| self.apply_one(c)).collect()
    }
}

pub fn fit_histogram_binning(confidences: &[f64], correctness: &[f64], bins: usize) -> Result<CalibrationMap> {
    check_finite(confidences)?;
    if confidences.len() != correctness.len() {
        return Err(MetricError::LengthMismatch {
            left: confidences.len(),
            right: correctness.len(),
        });
    }
    if confidences.is_empty() {
        return Err(MetricError::Empty);
    }
    if bins == 0 {
        return Err(MetricError::InvalidBins(bins));
    }
    let effective = if bins > confidences.len() {
        log::warn!(
            "{bins} calibration bins for {} points, using {}",
            confidences.len(),
            confidences.len()
        );
        confidences.len()
    } else {
        bins
    };
    let pairs = sorted_pairs(confidences, correctness);
    let sorted: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut start = 0;
    let mut map = CalibrationMap {
        upper_edges: Vec::new(),
        rates: Vec::new(),
        counts: Vec::new(),
        requested_bins: bins,
    };
    for end in equal_mass_bins(&sorted, effective) {
        let count = end - start;
        map.upper_edges.push(sorted[end - 1]);
        map.rates.push(mean(pairs[start..end].iter().map(|p| p.1), count));
        map.counts.push(count);
        start = end;
    }
    Ok(map)
}

/// Expected calibration error over equal-mass bins of the (already
/// calibrated) confidences.
pub fn ece(calibrated: &[f64], correctness: &[f64], bins: usize) -> Result<f64> {
    check_finite(calibrated)?;
    if calibrated.len() != correctness.len() {
        return Err(MetricError::LengthMismatch {
            left: calibrated.len(),
            right: correctness.len(),
        });
    }
    if calibrated.is_empty() {
        return Err(MetricError::Empty);
    }
    if bins == 0 {
        return Err(MetricError::InvalidBins(bins));
    }
    let pairs = sorted_pairs(calibrated, correctness);
    let sorted: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n = pairs.len() as f64;
    let mut start = 0;
    let mut total = 0.0;
    for end in equal_mass_bins(&sorted, bins) {
        let bin = &pairs[start..end];
        let count = bin.len();
        let acc = mean(bin.iter().map(|p| p.1), count);
        // A single-valued bin uses the value itself so identical inputs give
        // an exact zero gap.
        let conf = if bin[0].0 == bin[count - 1].0 {
            bin[0].0
        } else {
            mean(bin.iter().map(|p| p.0), count)
        };
        total += count as f64 / n * (acc - conf).abs();
        start = end;
    }
    Ok(total)
}

/// Binned estimate of `E[f | C]` at every point: the mean correctness of the
/// point's equal-mass confidence bin.
pub fn binned_regression(confidences: &[f64], correctness: &[f64], bins: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[a].total_cmp(&confidences[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| confidences[i]).collect();
    let mut reg = vec![0.0; confidences.len()];
    let mut start = 0;
    for end in equal_mass_bins(&sorted, bins) {
        let members = &order[start..end];
        let value = mean(members.iter().map(|&i| correctness[i]), members.len());
        for &i in members {
            reg[i] = value;
        }
        start = end;
    }
    reg
}

/// For each point, `#{j : x_j > x_i} + #{j : x_j = x_i} / 2` (self included).
fn upper_counts(values: &[f64]) -> Vec<f64> {
    let ranks = super::ranking::average_ranks(values);
    let n = values.len() as f64;
    // average rank r_i = #{x_j < x_i} + (#{x_j = x_i} + 1) / 2
    ranks.iter().map(|r| n - r + 0.5).collect()
}

/// Rank calibration error: mean absolute gap between the upper-tail rank of
/// the binned regression and the upper-tail rank of the confidence.
pub fn rce(confidences: &[f64], correctness: &[f64], bins: usize) -> Result<f64> {
    check_finite(confidences)?;
    if confidences.len() != correctness.len() {
        return Err(MetricError::LengthMismatch {
            left: confidences.len(),
            right: correctness.len(),
        });
    }
    if confidences.is_empty() {
        return Err(MetricError::Empty);
    }
    if bins < 2 {
        return Err(MetricError::InvalidBins(bins));
    }
    let n = confidences.len() as f64;
    let reg = binned_regression(confidences, correctness, bins);
    let reg_upper = upper_counts(&reg);
    let conf_upper = upper_counts(confidences);
    let total: f64 = reg_upper
        .iter()
        .zip(&conf_upper)
        .map(|(a, b)| ((a - b) / n).abs())
        .sum();
    Ok(total / n)
}

/// Seeded split into (fit, eval) index sets, each ascending. The fit side
/// gets `floor(n / 2)` points.
pub fn calibration_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut idx);
    let mut fit = idx[..n / 2].to_vec();
    let mut eval = idx[n / 2..].to_vec();
    fit.sort_unstable();
    eval.sort_unstable();
    (fit, eval)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_respect_ties() {
        let v = [0.1, 0.2, 0.2, 0.2, 0.3, 0.4];
        assert_eq!(equal_mass_bins(&v, 2), vec![4, 6]);
        assert_eq!(equal_mass_bins(&v, 3), vec![4, 6]);
        assert_eq!(equal_mass_bins(&v, 4), vec![1, 4, 5, 6]);
        assert_eq!(equal_mass_bins(&[0.5; 5], 3), vec![5]);
        assert_eq!(equal_mass_bins(&[1.0, 2.0, 3.0, 4.0], 1), vec![4]);
    }

    #[test]
    fn single_bin_maps_to_global_accuracy() {
        let c = [0.1, 0.5, 0.9, 0.3];
        let f = [1.0, 0.0, 1.0, 1.0];
        let map = fit_histogram_binning(&c, &f, 1).unwrap();
        assert_eq!(map.apply(&[0.0, 0.4, 2.0]), vec![0.75; 3]);
    }

    #[test]
    fn too_many_bins_are_reduced() {
        let map = fit_histogram_binning(&[0.1, 0.2], &[0.0, 1.0], 10).unwrap();
        assert_eq!(map.bins(), 2);
        assert_eq!(map.requested_bins, 10);
    }

    #[test]
    fn ece_examples() {
        assert_eq!(ece(&[1.0; 4], &[1.0, 0.0, 1.0, 0.0], 10).unwrap(), 0.5);
        assert_eq!(ece(&[0.5, 0.5, 1.0], &[1.0, 0.0, 1.0], 2).unwrap(), 0.0);
    }

    #[test]
    fn split_is_a_partition() {
        let (fit, eval) = calibration_split(11, 5);
        assert_eq!(fit.len(), 5);
        let mut all: Vec<usize> = fit.iter().chain(&eval).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        assert_eq!(calibration_split(11, 5), (fit, eval));
    }
}
