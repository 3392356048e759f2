//! Precomputed matrix files.
//!
//! ```text
//! {"context_sha256":"…","kind":"nli_entailment","n":3}
//! 1 0.25 0.5
//! 0.25 1 0.125
//! 0.5 0.125 1
//! ```
//!
//! `context_sha256` is the SHA-256 of the question text the pairs were scored
//! under, or null. Values are whitespace separated decimals. On load every
//! entry must lie in [0, 1], the matrix must be symmetric within
//! [`SYMMETRY_TOL`] and the diagonal must follow the kind's convention.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Result, SimilarityError, SimilarityKind, SimilarityMatrix};

pub const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    context_sha256: Option<String>,
    kind: SimilarityKind,
    n: usize,
}

pub fn parse_matrix(content: &str) -> Result<SimilarityMatrix> {
    let mut lines = content.lines().filter(|l| !l.trim().is_empty());
    let header: Header = serde_json::from_str(
        lines
            .next()
            .ok_or_else(|| SimilarityError::Parse("missing header line".into()))?,
    )
    .map_err(|e| SimilarityError::Parse(format!("header: {e}")))?;
    let n = header.n;
    let mut values = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (r, line) in lines.enumerate() {
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|e| SimilarityError::Parse(format!("row {r}: {tok:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != n {
            return Err(SimilarityError::Shape(format!(
                "row {r} has {} values, expected {n}",
                row.len()
            )));
        }
        values.extend(row);
        rows += 1;
    }
    if rows != n {
        return Err(SimilarityError::Shape(format!("{rows} rows, expected {n}")));
    }
    let mut m = SimilarityMatrix::from_values(n, header.kind, values, header.context_sha256, SYMMETRY_TOL)?;
    for i in 0..n {
        m.values[i * n + i] = header.kind.diagonal();
    }
    Ok(m)
}

pub fn load_precomputed(path: &Path) -> Result<SimilarityMatrix> {
    parse_matrix(&std::fs::read_to_string(path)?)
}

/// Serialize with shortest round-trip decimals, so a written matrix reloads
/// bit-identically.
pub fn format_matrix(m: &SimilarityMatrix) -> String {
    let header = Header {
        context_sha256: m.context_sha256.clone(),
        kind: m.kind,
        n: m.n,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for i in 0..m.n {
        for (j, v) in m.row(i).iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            write!(out, "{v:?}").expect("write to string");
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix(m: &SimilarityMatrix, path: &Path) -> Result<()> {
    std::fs::write(path, format_matrix(m))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = r#"{"context_sha256":null,"kind":"nli_entailment","n":4}
1 0.9 0.1 0.2
0.9 1 0.15 0.1
0.1 0.15 1 0.8
0.2 0.1 0.8 1
"#;

    #[test]
    fn loads_valid_fixture_with_unit_diagonal() {
        let m = parse_matrix(VALID).unwrap();
        assert_eq!(m.n(), 4);
        assert!((0..4).all(|i| m.get(i, i) == 1.0));
        assert_eq!(m.get(2, 3), 0.8);
    }

    #[test]
    fn round_trips_bit_exactly() {
        let m = parse_matrix(VALID).unwrap();
        assert_eq!(parse_matrix(&format_matrix(&m)).unwrap(), m);
        let odd = SimilarityMatrix::from_values(
            2,
            SimilarityKind::NliContradiction,
            vec![0.0, 0.1 + 0.2, 0.1 + 0.2, 0.0],
            Some("abc".into()),
            0.0,
        )
        .unwrap();
        assert_eq!(parse_matrix(&format_matrix(&odd)).unwrap(), odd);
    }

    #[test]
    fn rejects_out_of_range_values() {
        let bad = VALID.replace("0.9 1 0.15", "1.2 1 0.15");
        assert!(matches!(parse_matrix(&bad), Err(SimilarityError::Range { value, .. }) if value == 1.2));
    }

    #[test]
    fn rejects_asymmetry_beyond_tolerance() {
        let bad = VALID.replace("0.9 1 0.15", "0.901 1 0.15");
        assert!(matches!(parse_matrix(&bad), Err(SimilarityError::Asymmetric { .. })));
        let ok = VALID.replace("0.9 1 0.15", "0.9000000000001 1 0.15");
        assert!(parse_matrix(&ok).is_ok());
    }

    #[test]
    fn rejects_shape_errors() {
        let short = VALID.replace("0.2 0.1 0.8 1\n", "");
        assert!(matches!(parse_matrix(&short), Err(SimilarityError::Shape(_))));
        let wide = VALID.replace("0.2 0.1 0.8 1", "0.2 0.1 0.8 1 0");
        assert!(matches!(parse_matrix(&wide), Err(SimilarityError::Shape(_))));
    }
}
