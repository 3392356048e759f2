//! Client for the local model sidecar (`/v1/generate`, `/v1/logprobs`,
//! `/health`). NLI pair scoring lives in [`crate::similarity::nli`].
//!
//! The sidecar's detokenization rule is plain concatenation of token texts.
//! Stop sequences are applied client-side because the generate endpoint has
//! no stop parameter.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::http::HttpClient;
use super::{
    Backend, GatewayError, GenerationConfig, Result, SampledResponse, SamplingParams,
    TokenLogprob, TokenLogprobSeq,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    #[serde(default)]
    pub model_id: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireToken {
    text: String,
    logprob: f64,
    #[serde(default)]
    attention_weight: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct GenerateResponse {
    texts: Vec<String>,
    #[serde(default)]
    logprobs: Option<Vec<Vec<WireToken>>>,
}

#[derive(Debug, Deserialize)]
struct LogprobResponse {
    tokens: Vec<WireToken>,
    #[serde(default)]
    model_id: Option<String>,
    #[serde(default)]
    channel_id: Option<String>,
}

#[derive(Debug)]
pub struct SidecarBackend {
    http: HttpClient,
    model: String,
}

fn to_seq(tokens: Vec<WireToken>, channel: Option<String>) -> TokenLogprobSeq {
    TokenLogprobSeq {
        tokens: tokens
            .into_iter()
            .map(|t| TokenLogprob {
                text: t.text,
                logprob: t.logprob,
                relevance_weight: None,
                attention_weight: t.attention_weight,
            })
            .collect(),
        channel,
    }
}

/// Cut `text` at the earliest stop sequence, keeping only tokens that lie
/// entirely before the cut.
pub fn apply_stop(
    text: &str,
    tokens: Option<TokenLogprobSeq>,
    stop: &[String],
) -> (String, Option<TokenLogprobSeq>, bool) {
    let cut = stop
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min();
    let Some(cut) = cut else {
        return (text.to_string(), tokens, false);
    };
    let tokens = tokens.map(|mut seq| {
        let mut end = 0;
        seq.tokens.retain(|t| {
            end += t.text.len();
            end <= cut
        });
        seq
    });
    (text[..cut].to_string(), tokens, true)
}

impl SidecarBackend {
    pub fn new(cfg: &GenerationConfig) -> Result<Self> {
        let http = HttpClient::new(
            &cfg.endpoint,
            cfg.retry.clone(),
            Duration::from_secs(cfg.timeout_secs),
            None,
        )?;
        Ok(Self {
            http,
            model: cfg.model.clone(),
        })
    }

    pub fn health(&self) -> Result<Health> {
        let v = self.http.get_json("health")?;
        serde_json::from_value(v).map_err(|e| GatewayError::Protocol(format!("/health: {e}")))
    }

    fn logprobs(&self, prompt: &str, completion: &str, channel: Option<&str>) -> Result<LogprobResponse> {
        let body = json!({
            "prompt": prompt,
            "completion": completion,
            "want_attention": channel.is_some(),
            "weight_channel": channel,
        });
        let v = self.http.post_json("v1/logprobs", &body)?;
        let resp: LogprobResponse = serde_json::from_value(v)
            .map_err(|e| GatewayError::Protocol(format!("/v1/logprobs: {e}")))?;
        if let Some(m) = &resp.model_id {
            log::debug!("/v1/logprobs served by {m}");
        }
        Ok(resp)
    }
}

impl Backend for SidecarBackend {
    fn identity(&self) -> String {
        format!("sidecar:{}@{}", self.model, self.http.base())
    }

    fn generate(&self, prompt: &str, params: &SamplingParams) -> Result<Vec<SampledResponse>> {
        let mut body = json!({
            "prompt": prompt,
            "n": params.n,
            "max_tokens": params.max_tokens,
        });
        if let Some(t) = params.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(s) = params.seed {
            body["seed"] = json!(s);
        }
        let v: Value = self.http.post_json("v1/generate", &body)?;
        let resp: GenerateResponse = serde_json::from_value(v)
            .map_err(|e| GatewayError::Protocol(format!("/v1/generate: {e}")))?;
        if resp.texts.len() != params.n {
            return Err(GatewayError::Protocol(format!(
                "/v1/generate returned {} texts for n={}",
                resp.texts.len(),
                params.n
            )));
        }
        let mut per_text: Vec<Option<TokenLogprobSeq>> = match resp.logprobs {
            Some(lps) if lps.len() == resp.texts.len() => {
                lps.into_iter().map(|t| Some(to_seq(t, None))).collect()
            }
            Some(_) => {
                return Err(GatewayError::Protocol(
                    "/v1/generate logprobs do not align with texts".into(),
                ))
            }
            None => vec![None; resp.texts.len()],
        };
        resp.texts
            .iter()
            .zip(per_text.drain(..))
            .map(|(text, tokens)| {
                if let Some(seq) = &tokens {
                    if seq.text() != *text {
                        return Err(GatewayError::TokenizationMismatch {
                            expected: text.clone(),
                            joined: seq.text(),
                        });
                    }
                }
                let (text, tokens, stopped) = apply_stop(text, tokens, &params.stop);
                Ok(SampledResponse {
                    text,
                    finish_reason: stopped.then(|| "stop".to_string()),
                    tokens: if params.logprobs { tokens } else { None },
                })
            })
            .collect()
    }

    fn teacher_force(
        &self,
        prompt: &str,
        completion: &str,
        channel: Option<&str>,
    ) -> Result<TokenLogprobSeq> {
        let resp = self.logprobs(prompt, completion, channel)?;
        if channel.is_some() && resp.tokens.iter().any(|t| t.attention_weight.is_none()) {
            return Err(GatewayError::Capability {
                backend: self.identity(),
                capability: format!("attention channel {channel:?}"),
            });
        }
        let channel_id = resp.channel_id.clone().or_else(|| channel.map(str::to_string));
        Ok(to_seq(resp.tokens, channel.and(channel_id)))
    }

    fn true_false_probs(&self, prompt: &str) -> Result<(f64, f64)> {
        let mass = |word: &str| -> Result<f64> {
            let resp = self.logprobs(prompt, word, None)?;
            Ok(resp.tokens.iter().map(|t| t.logprob).sum::<f64>().exp())
        };
        Ok((mass(" True")?, mass(" False")?))
    }
}
