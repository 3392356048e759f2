//! Method rankings by AUROC and the correctness-threshold sweep.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::StudyUnit;
use crate::methods::{Family, Method};
use crate::metrics::{auroc, threshold_label};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedMethod {
    pub method: Method,
    pub auroc: Option<f64>,
}

/// Order by AUROC descending, ties by method id ascending; methods with an
/// undefined AUROC go last, by id.
pub fn rank_methods(entries: &[(Method, Option<f64>)]) -> Vec<RankedMethod> {
    let mut ranked: Vec<RankedMethod> = entries
        .iter()
        .map(|&(method, auroc)| RankedMethod { method, auroc })
        .collect();
    ranked.sort_by(|a, b| match (a.auroc, b.auroc) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.method.id().cmp(b.method.id())),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.method.id().cmp(b.method.id()),
    });
    ranked
}

/// One row of the ranking table: a pipeline at one threshold, with each
/// family ranked separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub pipeline: String,
    pub tau: Option<f64>,
    pub blackbox: Vec<RankedMethod>,
    pub whitebox: Vec<RankedMethod>,
}

impl RankingRow {
    pub fn new(pipeline: &str, tau: Option<f64>, ranked: Vec<RankedMethod>) -> Self {
        let (blackbox, whitebox): (Vec<RankedMethod>, Vec<RankedMethod>) = ranked
            .into_iter()
            .partition(|r| matches!(r.method.family(), Family::Blackbox(_)));
        Self {
            pipeline: pipeline.to_string(),
            tau,
            blackbox,
            whitebox,
        }
    }

    pub fn family(&self, blackbox: bool) -> &[RankedMethod] {
        if blackbox {
            &self.blackbox
        } else {
            &self.whitebox
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RankingTable {
    pub rows: Vec<RankingRow>,
}

impl RankingTable {
    /// Markdown with one group per family; each group lists the rows in
    /// order, rank positions as columns.
    pub fn to_markdown(&self) -> String {
        let width = self
            .rows
            .iter()
            .flat_map(|r| [r.blackbox.len(), r.whitebox.len()])
            .max()
            .unwrap_or(0);
        let mut out = String::from("| Pipeline | τ |");
        for k in 1..=width {
            let _ = write!(out, " {k} |");
        }
        out.push_str("\n|---|---|");
        out.push_str(&"---|".repeat(width));
        out.push('\n');
        for (name, blackbox) in [("Black-box", true), ("White-box", false)] {
            if self.rows.iter().all(|r| r.family(blackbox).is_empty()) {
                continue;
            }
            let _ = writeln!(out, "| **{name}** | |{}", " |".repeat(width));
            for r in &self.rows {
                let tau = r.tau.map(|t| t.to_string()).unwrap_or_else(|| "N/A".into());
                let _ = write!(out, "| {} | {tau} |", r.pipeline);
                let cells = r.family(blackbox);
                for k in 0..width {
                    match cells.get(k) {
                        Some(c) if c.auroc.is_some() => {
                            let _ = write!(out, " {} |", c.method.label());
                        }
                        Some(c) => {
                            let _ = write!(out, " {} (undefined) |", c.method.label());
                        }
                        None => out.push_str(" |"),
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Methods that score at least one unit, in canonical order.
pub fn unit_methods(units: &[StudyUnit]) -> Vec<Method> {
    let set: BTreeSet<Method> = units.iter().flat_map(|u| u.confidences.keys().copied()).collect();
    set.into_iter().collect()
}

/// AUROC of `method` over the units it scored, with labels `corr > tau`.
pub fn auroc_at(units: &[StudyUnit], method: Method, labels: &[u8]) -> Option<f64> {
    let mut conf = Vec::new();
    let mut lab = Vec::new();
    for (u, &l) in units.iter().zip(labels) {
        if let Some(&c) = u.confidences.get(&method) {
            conf.push(c);
            lab.push(l);
        }
    }
    auroc(&conf, &lab).ok()
}

/// Rankings at every threshold, in ascending τ order. The optional
/// `reference` row (typically option injection) is appended last.
pub fn threshold_sweep(units: &[StudyUnit], taus: &[f64], reference: Option<RankingRow>) -> RankingTable {
    let methods = unit_methods(units);
    let mut taus = taus.to_vec();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let mut rows: Vec<RankingRow> = taus
        .iter()
        .map(|&tau| {
            let labels: Vec<u8> = units.iter().map(|u| threshold_label(u.correctness, tau)).collect();
            let entries: Vec<(Method, Option<f64>)> = methods
                .iter()
                .map(|&m| (m, auroc_at(units, m, &labels)))
                .collect();
            RankingRow::new("Baseline", Some(tau), rank_methods(&entries))
        })
        .collect();
    rows.extend(reference);
    RankingTable { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_by_id_and_undefined_go_last() {
        let r = rank_methods(&[
            (Method::Sl, Some(0.7)),
            (Method::PTrue, None),
            (Method::Csl, Some(0.7)),
            (Method::Perplexity, Some(0.9)),
            (Method::CslNext, None),
        ]);
        let order: Vec<Method> = r.iter().map(|x| x.method).collect();
        assert_eq!(
            order,
            vec![Method::Perplexity, Method::Csl, Method::Sl, Method::CslNext, Method::PTrue]
        );
    }

    #[test]
    fn markdown_groups_families() {
        let row = RankingRow::new(
            "MCQA-Eval",
            None,
            rank_methods(&[(Method::DegJ, Some(0.6)), (Method::Sl, Some(0.8)), (Method::EccJ, None)]),
        );
        let md = RankingTable { rows: vec![row] }.to_markdown();
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines[0], "| Pipeline | τ | 1 | 2 |");
        assert_eq!(lines[2], "| **Black-box** | | | |");
        assert_eq!(lines[3], "| MCQA-Eval | N/A | Deg(J) | Ecc(J) (undefined) |");
        assert_eq!(lines[5], "| MCQA-Eval | N/A | SL | |");
    }
}
