//! OpenAI-compatible chat completions backend.
//!
//! Supports sampling (optionally with token logprobs) and next-token
//! True/False probabilities through `top_logprobs`. Teacher forcing of an
//! arbitrary completion is not expressible in this API, so candidate scoring
//! and attention channels report a capability error.

use std::time::Duration;

use serde_json::{json, Value};

use super::http::{HttpClient, API_KEY_ENV};
use super::{
    Backend, GatewayError, GenerationConfig, Result, SampledResponse, SamplingParams,
    TokenLogprob, TokenLogprobSeq,
};

/// How many alternatives to request when looking for True/False mass.
const TOP_LOGPROBS: u32 = 20;

#[derive(Debug)]
pub struct OpenAiBackend {
    http: HttpClient,
    model: String,
}

impl OpenAiBackend {
    pub fn new(cfg: &GenerationConfig) -> Result<Self> {
        let bearer = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        let http = HttpClient::new(
            &cfg.endpoint,
            cfg.retry.clone(),
            Duration::from_secs(cfg.timeout_secs),
            bearer,
        )?;
        Ok(Self {
            http,
            model: cfg.model.clone(),
        })
    }

    fn request_body(&self, prompt: &str, params: &SamplingParams) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "n": params.n,
            "max_tokens": params.max_tokens,
        });
        if let Some(t) = params.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }
        if !params.stop.is_empty() {
            body["stop"] = json!(params.stop);
        }
        if params.logprobs {
            body["logprobs"] = json!(true);
        }
        body
    }
}

fn protocol(msg: impl Into<String>) -> GatewayError {
    GatewayError::Protocol(msg.into())
}

fn parse_token_logprobs(content: &Value) -> Result<TokenLogprobSeq> {
    let entries = content
        .as_array()
        .ok_or_else(|| protocol("logprobs.content is not an array"))?;
    let tokens = entries
        .iter()
        .map(|e| {
            let text = e["token"].as_str().ok_or_else(|| protocol("token without text"))?;
            let lp = e["logprob"].as_f64().ok_or_else(|| protocol("token without logprob"))?;
            Ok(TokenLogprob::new(text, lp))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TokenLogprobSeq {
        tokens,
        channel: None,
    })
}

/// Parse the `choices` array of a chat completion response.
pub fn parse_choices(resp: &Value) -> Result<Vec<SampledResponse>> {
    let choices = resp["choices"]
        .as_array()
        .ok_or_else(|| protocol("response has no choices array"))?;
    choices
        .iter()
        .map(|c| {
            let text = match &c["message"]["content"] {
                Value::String(s) => s.clone(),
                Value::Null => String::new(),
                _ => return Err(protocol("message.content is not a string")),
            };
            let tokens = match &c["logprobs"]["content"] {
                Value::Null => None,
                content => Some(parse_token_logprobs(content)?),
            };
            if let Some(seq) = &tokens {
                seq.validate()?;
            }
            Ok(SampledResponse {
                text,
                finish_reason: c["finish_reason"].as_str().map(str::to_string),
                tokens,
            })
        })
        .collect()
}

/// Sum next-token probability mass over True/False surface forms.
pub fn true_false_mass(resp: &Value) -> Result<(f64, f64)> {
    let top = &resp["choices"][0]["logprobs"]["content"][0]["top_logprobs"];
    let alts = top
        .as_array()
        .ok_or_else(|| protocol("response has no top_logprobs for the first token"))?;
    let (mut pt, mut pf) = (0.0, 0.0);
    for alt in alts {
        let (Some(tok), Some(lp)) = (alt["token"].as_str(), alt["logprob"].as_f64()) else {
            return Err(protocol("malformed top_logprobs entry"));
        };
        match tok.trim().to_lowercase().as_str() {
            "true" => pt += lp.exp(),
            "false" => pf += lp.exp(),
            _ => {}
        }
    }
    Ok((pt, pf))
}

impl Backend for OpenAiBackend {
    fn identity(&self) -> String {
        format!("openai_compatible:{}@{}", self.model, self.http.base())
    }

    fn generate(&self, prompt: &str, params: &SamplingParams) -> Result<Vec<SampledResponse>> {
        let resp = self
            .http
            .post_json("chat/completions", &self.request_body(prompt, params))?;
        parse_choices(&resp)
    }

    fn teacher_force(
        &self,
        _prompt: &str,
        _completion: &str,
        channel: Option<&str>,
    ) -> Result<TokenLogprobSeq> {
        let capability = match channel {
            Some(c) => format!("teacher-forced logprobs with attention channel {c:?}"),
            None => "teacher-forced logprobs".to_string(),
        };
        Err(GatewayError::Capability {
            backend: self.identity(),
            capability,
        })
    }

    fn true_false_probs(&self, prompt: &str) -> Result<(f64, f64)> {
        let mut body = self.request_body(
            prompt,
            &SamplingParams {
                n: 1,
                temperature: None,
                max_tokens: 1,
                stop: Vec::new(),
                seed: None,
                logprobs: true,
            },
        );
        body["top_logprobs"] = json!(TOP_LOGPROBS);
        let resp = self.http.post_json("chat/completions", &body)?;
        true_false_mass(&resp)
    }
}
