//! NLI pair scoring over the sidecar's `/v1/similarity` endpoint.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Result, SimilarityError, SimilarityKind, SimilarityProvider};
use crate::gateway::http::HttpClient;
use crate::gateway::RetryPolicy;

/// Server-side limit on pairs per request.
pub const MAX_PAIRS_PER_REQUEST: usize = 256;

#[derive(Debug, Serialize)]
struct WirePair<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Debug, Deserialize)]
struct PairScoreResponse {
    scores: Vec<f64>,
}

#[derive(Debug)]
pub struct HttpNliProvider {
    http: HttpClient,
    kind: SimilarityKind,
    contextualize: bool,
}

impl HttpNliProvider {
    /// `contextualize` prefixes the question to both sides of every pair.
    pub fn new(
        endpoint: &str,
        kind: SimilarityKind,
        contextualize: bool,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Result<Self> {
        if kind == SimilarityKind::Jaccard {
            return Err(SimilarityError::Provider(
                "jaccard is computed locally, not by the NLI service".into(),
            ));
        }
        let http = HttpClient::new(endpoint, retry, timeout, None)
            .map_err(|e| SimilarityError::Provider(e.to_string()))?;
        Ok(Self {
            http,
            kind,
            contextualize,
        })
    }

    fn mode(&self) -> &'static str {
        match self.kind {
            SimilarityKind::NliContradiction => "contradiction",
            _ => "entailment",
        }
    }
}

/// Premise/hypothesis text for one side of a pair.
pub fn contextualized(context: Option<&str>, text: &str, enabled: bool) -> String {
    match context {
        Some(c) if enabled => format!("{c} {text}"),
        _ => text.to_string(),
    }
}

impl SimilarityProvider for HttpNliProvider {
    fn kind(&self) -> SimilarityKind {
        self.kind
    }

    fn score_pairs(&self, context: Option<&str>, pairs: &[(&str, &str)]) -> Result<Vec<(f64, f64)>> {
        let sides: Vec<(String, String)> = pairs
            .iter()
            .map(|(a, b)| {
                (
                    contextualized(context, a, self.contextualize),
                    contextualized(context, b, self.contextualize),
                )
            })
            .collect();
        // Both directions of pair k sit at positions 2k and 2k+1.
        let directed: Vec<WirePair> = sides
            .iter()
            .flat_map(|(a, b)| {
                [
                    WirePair {
                        premise: a,
                        hypothesis: b,
                    },
                    WirePair {
                        premise: b,
                        hypothesis: a,
                    },
                ]
            })
            .collect();
        let mut scores = Vec::with_capacity(directed.len());
        for chunk in directed.chunks(MAX_PAIRS_PER_REQUEST) {
            let body = json!({"mode": self.mode(), "pairs": chunk});
            let v = self
                .http
                .post_json("v1/similarity", &body)
                .map_err(|e| SimilarityError::Provider(e.to_string()))?;
            let resp: PairScoreResponse = serde_json::from_value(v)
                .map_err(|e| SimilarityError::Provider(format!("/v1/similarity: {e}")))?;
            if resp.scores.len() != chunk.len() {
                return Err(SimilarityError::LengthMismatch {
                    expected: chunk.len(),
                    got: resp.scores.len(),
                });
            }
            scores.extend(resp.scores);
        }
        Ok(scores.chunks(2).map(|p| (p[0], p[1])).collect())
    }
}
