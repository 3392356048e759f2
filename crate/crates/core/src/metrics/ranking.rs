//! Rank-based selective prediction metrics.

use super::{check_inputs, MetricError, Result};

/// Average 1-based ranks of `values` in ascending order; tied values share
/// the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start+1 ..= end, mean (start + 1 + end) / 2.
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Mann–Whitney AUROC: the fraction of (correct, incorrect) pairs in which
/// the correct one has higher confidence, ties counting one half.
pub fn auroc(confidences: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(confidences, labels)?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::UndefinedAuroc {
            positives,
            negatives,
        });
    }
    let ranks = average_ranks(confidences);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(r, _)| r)
        .sum();
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Indices sorted by confidence descending, ties in input order.
fn descending_order(confidences: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]));
    order
}

/// Area under the accuracy-rejection curve: mean over k = 1..N of the
/// accuracy among the k most confident units.
pub fn auarc(confidences: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(confidences, labels)?;
    let mut correct = 0u64;
    let mut total = 0.0;
    for (k, i) in descending_order(confidences).into_iter().enumerate() {
        correct += u64::from(labels[i]);
        total += correct as f64 / (k + 1) as f64;
    }
    Ok(total / confidences.len() as f64)
}

/// ROC curve vertices `(FPR, TPR)` from thresholding at each distinct
/// confidence, high to low. Collinear intermediate points are dropped.
pub fn roc_points(confidences: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    check_inputs(confidences, labels)?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::UndefinedAuroc {
            positives,
            negatives,
        });
    }
    let order = descending_order(confidences);
    let mut counts: Vec<(i64, i64)> = vec![(0, 0)];
    let (mut fp, mut tp) = (0i64, 0i64);
    let mut k = 0;
    while k < order.len() {
        let c = confidences[order[k]];
        while k < order.len() && confidences[order[k]] == c {
            if labels[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        if counts.len() >= 2 {
            let (x0, y0) = counts[counts.len() - 2];
            let (x1, y1) = counts[counts.len() - 1];
            if (x1 - x0) * (tp - y0) == (y1 - y0) * (fp - x0) {
                counts.pop();
            }
        }
        counts.push((fp, tp));
    }
    Ok(counts
        .into_iter()
        .map(|(f, t)| (f as f64 / negatives as f64, t as f64 / positives as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.9, 0.8, 0.7, 0.1], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert!(matches!(
            auroc(&[0.1, 0.2], &[1, 1]),
            Err(MetricError::UndefinedAuroc { positives: 2, negatives: 0 })
        ));
    }

    #[test]
    fn auarc_examples() {
        assert_eq!(auarc(&[0.3, 0.1, 0.2], &[1, 1, 1]).unwrap(), 1.0);
        let v = auarc(&[0.9, 0.8, 0.7, 0.1], &[1, 0, 1, 0]).unwrap();
        assert!((v - (1.0 + 0.5 + 2.0 / 3.0 + 0.5) / 4.0).abs() < 1e-9);
        assert!(auarc(&[], &[]).is_err());
    }

    #[test]
    fn ideal_roc_has_three_vertices() {
        let pts = roc_points(&[0.9, 0.8, 0.3, 0.2, 0.1], &[1, 1, 0, 0, 0]).unwrap();
        assert_eq!(pts, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        let tied = roc_points(&[0.5; 4], &[1, 0, 1, 0]).unwrap();
        assert_eq!(tied, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
