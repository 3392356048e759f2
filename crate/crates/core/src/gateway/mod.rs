//! Model interaction behind one interface, with mandatory record/replay.
//!
//! Every value a [`Gateway`] returns is first appended to a [`RecordStore`]
//! and then read back from the stored payload, so a live run and a later
//! replay of the same store yield bit-identical values. In replay mode there
//! is no backend at all and a store miss is an error.

pub mod http;
pub mod openai;
pub mod record;
pub mod scripted;
pub mod sidecar;

use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::normalize_ws;
pub use record::{Record, RecordKind, RecordStore};

const P_TRUE_TEMPLATE: &str = include_str!("../../templates/p_true.txt");
const JUDGE_TEMPLATE: &str = include_str!("../../templates/judge.txt");

/// First-token forms accepted as a positive or negative judge verdict.
pub const JUDGE_AFFIRMATIVE: &[&str] = &["yes", "correct", "true"];
pub const JUDGE_NEGATIVE: &[&str] = &["no", "incorrect", "false", "wrong"];

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned HTTP {status}: {body}")]
    Backend { status: u16, body: String },
    #[error("backend {backend} does not support {capability}")]
    Capability { backend: String, capability: String },
    #[error("replay miss: no {kind} record for item {item_id:?}")]
    ReplayMiss { kind: RecordKind, item_id: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("tokenization mismatch: tokens join to {joined:?}, expected {expected:?}")]
    TokenizationMismatch { expected: String, joined: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("judge reply {reply:?} is indeterminate")]
    Indeterminate { reply: String },
    #[error("record store: {0}")]
    Store(#[from] std::io::Error),
}

pub type Result<T, E = GatewayError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    OpenaiCompatible,
    Sidecar,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PTrueMode {
    #[default]
    Logprob,
    Sampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            backoff_base_ms: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub backend: BackendKind,
    pub endpoint: String,
    pub model: String,
    pub n_samples: usize,
    /// `None` leaves the backend's default temperature in place.
    pub temperature: Option<f64>,
    pub max_tokens: u32,
    pub stop: Vec<String>,
    pub request_seed: Option<u64>,
    /// Ask the backend for token logprobs of sampled responses.
    pub sample_logprobs: bool,
    pub concurrency_limit: usize,
    pub retry: RetryPolicy,
    pub p_true_mode: PTrueMode,
    pub p_true_samples: usize,
    pub timeout_secs: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Replay,
            endpoint: "http://127.0.0.1:8000".to_string(),
            model: "unknown".to_string(),
            n_samples: 20,
            temperature: None,
            max_tokens: 64,
            stop: vec!["\n".to_string()],
            request_seed: None,
            sample_logprobs: false,
            concurrency_limit: 4,
            retry: RetryPolicy::default(),
            p_true_mode: PTrueMode::Logprob,
            p_true_samples: 10,
            timeout_secs: 120,
        }
    }
}

#[derive(Serialize)]
struct DigestView<'a> {
    max_tokens: u32,
    model: &'a str,
    n_samples: usize,
    request_seed: Option<u64>,
    stop: &'a [String],
    temperature: Option<f64>,
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 1 {
            return Err(GatewayError::InvalidRequest("n_samples must be >= 1".into()));
        }
        if self.concurrency_limit < 1 {
            return Err(GatewayError::InvalidRequest("concurrency_limit must be >= 1".into()));
        }
        if self.p_true_samples < 1 {
            return Err(GatewayError::InvalidRequest("p_true_samples must be >= 1".into()));
        }
        Ok(())
    }

    /// SHA-256 over the fields that change model outputs. Backend kind,
    /// endpoint, concurrency and retry settings are excluded so a replay
    /// configuration digests identically to the live run it replays.
    pub fn digest(&self) -> String {
        let view = DigestView {
            max_tokens: self.max_tokens,
            model: &self.model,
            n_samples: self.n_samples,
            request_seed: self.request_seed,
            stop: &self.stop,
            temperature: self.temperature,
        };
        sha256_hex(&serde_json::to_string(&view).expect("digest view serializes"))
    }

    pub fn sampling_params(&self) -> SamplingParams {
        SamplingParams {
            n: self.n_samples,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            stop: self.stop.clone(),
            seed: self.request_seed,
            logprobs: self.sample_logprobs,
        }
    }
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub n: usize,
    pub temperature: Option<f64>,
    pub max_tokens: u32,
    pub stop: Vec<String>,
    pub seed: Option<u64>,
    pub logprobs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub text: String,
    pub logprob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_weight: Option<f64>,
}

impl TokenLogprob {
    pub fn new(text: impl Into<String>, logprob: f64) -> Self {
        Self {
            text: text.into(),
            logprob,
            relevance_weight: None,
            attention_weight: None,
        }
    }
}

/// Upper bound on reported logprobs; backends occasionally round to tiny
/// positive values.
pub const LOGPROB_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprobSeq {
    pub tokens: Vec<TokenLogprob>,
    /// Weight channel identifier reported by the backend, e.g. `csl`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<String>,
}

impl TokenLogprobSeq {
    pub fn from_logprobs(logprobs: &[f64]) -> Self {
        Self {
            tokens: logprobs
                .iter()
                .enumerate()
                .map(|(i, &lp)| TokenLogprob::new(format!("t{i}"), lp))
                .collect(),
            channel: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    pub fn logprobs(&self) -> impl Iterator<Item = f64> + '_ {
        self.tokens.iter().map(|t| t.logprob)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.tokens.iter().enumerate() {
            if !t.logprob.is_finite() || t.logprob > LOGPROB_TOLERANCE {
                return Err(GatewayError::Protocol(format!(
                    "token {i} has logprob {} (must be finite and <= {LOGPROB_TOLERANCE})",
                    t.logprob
                )));
            }
            for w in [t.relevance_weight, t.attention_weight].into_iter().flatten() {
                if !w.is_finite() || w < 0.0 {
                    return Err(GatewayError::Protocol(format!(
                        "token {i} has invalid weight {w}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<TokenLogprobSeq>,
}

impl SampledResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: Some("stop".into()),
            tokens: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PTrueEstimate {
    pub probability: f64,
    pub mode: PTrueMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuations: Option<Vec<String>>,
}

/// A model backend. Implementations return a capability error for anything
/// they cannot do rather than approximating it.
pub trait Backend: Send + Sync {
    fn identity(&self) -> String;

    fn generate(&self, prompt: &str, params: &SamplingParams) -> Result<Vec<SampledResponse>>;

    /// Teacher-forced logprobs of `completion` after `prompt`. `channel`
    /// selects an attention weight channel (`csl`, `csl_next`).
    fn teacher_force(
        &self,
        prompt: &str,
        completion: &str,
        channel: Option<&str>,
    ) -> Result<TokenLogprobSeq>;

    /// Next-token probabilities of the "True" and "False" surface forms.
    fn true_false_probs(&self, prompt: &str) -> Result<(f64, f64)>;
}

/// Normalized p(True) / (p(True) + p(False)).
pub fn normalize_true_false(p_true: f64, p_false: f64) -> Option<f64> {
    let total = p_true + p_false;
    (total > 0.0 && total.is_finite()).then(|| p_true / total)
}

/// Whether a sampled one-token continuation counts as "True".
pub fn is_true_continuation(text: &str) -> bool {
    first_word(text).as_deref() == Some("true")
}

fn first_word(text: &str) -> Option<String> {
    let word = text.split_whitespace().next()?;
    let cleaned: String = word
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect();
    (!cleaned.is_empty()).then_some(cleaned)
}

/// Parse a judge reply: 1 for an allowlisted affirmative first token, 0 for a
/// recognised negative, otherwise indeterminate.
pub fn parse_judge_reply(reply: &str) -> Result<u8> {
    match first_word(reply) {
        Some(w) if JUDGE_AFFIRMATIVE.contains(&w.as_str()) => Ok(1),
        Some(w) if JUDGE_NEGATIVE.contains(&w.as_str()) => Ok(0),
        _ => Err(GatewayError::Indeterminate {
            reply: reply.to_string(),
        }),
    }
}

pub fn render_p_true_prompt(question: &str, candidate: &str, samples: Option<&[String]>) -> String {
    let body = P_TRUE_TEMPLATE
        .replacen("{{question}}", question, 1)
        .replacen("{{option}}", candidate, 1);
    match samples {
        Some(s) if !s.is_empty() => {
            let mut prefix = String::from("Here are some brainstormed answers:\n");
            for sample in s {
                prefix.push_str(sample.trim());
                prefix.push('\n');
            }
            format!("{prefix}{body}")
        }
        _ => body,
    }
}

pub fn render_judge_prompt(question: &str, response: &str, gold: &str) -> String {
    JUDGE_TEMPLATE
        .replacen("{{question}}", question, 1)
        .replacen("{{gold}}", gold, 1)
        .replacen("{{response}}", response, 1)
}

fn now_unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Record-first access to a backend.
pub struct Gateway {
    backend: Option<Box<dyn Backend>>,
    store: RecordStore,
    cfg: GenerationConfig,
    digest: String,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.as_ref().map(|b| b.identity()))
            .field("digest", &self.digest)
            .finish()
    }
}

impl Gateway {
    /// `backend` must be `None` exactly when the configuration is in replay
    /// mode.
    pub fn new(
        cfg: GenerationConfig,
        backend: Option<Box<dyn Backend>>,
        store: RecordStore,
    ) -> Result<Self> {
        cfg.validate()?;
        match (cfg.backend, backend.is_some()) {
            (BackendKind::Replay, true) => {
                return Err(GatewayError::InvalidRequest(
                    "replay mode takes no live backend".into(),
                ))
            }
            (BackendKind::OpenaiCompatible | BackendKind::Sidecar, false) => {
                return Err(GatewayError::InvalidRequest(
                    "live mode requires a backend".into(),
                ))
            }
            _ => {}
        }
        let digest = cfg.digest();
        Ok(Self {
            backend,
            store,
            cfg,
            digest,
        })
    }

    /// Build the configured live backend (or none for replay).
    pub fn connect(cfg: GenerationConfig, store: RecordStore) -> Result<Self> {
        let backend: Option<Box<dyn Backend>> = match cfg.backend {
            BackendKind::Replay => None,
            BackendKind::OpenaiCompatible => Some(Box::new(openai::OpenAiBackend::new(&cfg)?)),
            BackendKind::Sidecar => Some(Box::new(sidecar::SidecarBackend::new(&cfg)?)),
        };
        Self::new(cfg, backend, store)
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.cfg
    }

    pub fn config_digest(&self) -> &str {
        &self.digest
    }

    pub fn backend_identity(&self) -> String {
        self.backend
            .as_ref()
            .map(|b| b.identity())
            .unwrap_or_else(|| "replay".to_string())
    }

    pub fn is_replay(&self) -> bool {
        self.backend.is_none()
    }

    fn live(&self) -> &dyn Backend {
        self.backend.as_deref().expect("checked by caller")
    }

    /// Look up a record, or produce, persist and re-read it.
    fn recorded<T, F>(
        &self,
        kind: RecordKind,
        item_id: &str,
        prompt: &str,
        discriminator: serde_json::Map<String, serde_json::Value>,
        produce: F,
    ) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce(&dyn Backend) -> Result<T>,
    {
        let prompt_sha256 = sha256_hex(prompt);
        let key = record::lookup_key(kind, item_id, &prompt_sha256, &self.digest, &discriminator);
        let decode = |payload: &serde_json::Value| -> Result<T> {
            serde_json::from_value(payload["value"].clone())
                .map_err(|e| GatewayError::Protocol(format!("stored {kind} payload: {e}")))
        };
        if let Some(payload) = self.store.get(&key) {
            return decode(&payload);
        }
        if self.is_replay() {
            return Err(GatewayError::ReplayMiss {
                kind,
                item_id: item_id.to_string(),
            });
        }
        let value = produce(self.live())?;
        let mut payload = discriminator;
        payload.insert(
            "value".into(),
            serde_json::to_value(&value).map_err(|e| GatewayError::Protocol(e.to_string()))?,
        );
        let payload = serde_json::Value::Object(payload);
        let rec = Record {
            item_id: item_id.to_string(),
            prompt_sha256,
            config_digest: self.digest.clone(),
            kind,
            payload,
            created_at_unix_ms: now_unix_ms(),
        };
        self.store.append(&rec)?;
        decode(&rec.payload)
    }

    pub fn sample_responses(&self, item_id: &str, prompt: &str) -> Result<Vec<SampledResponse>> {
        let params = self.cfg.sampling_params();
        let responses: Vec<SampledResponse> =
            self.recorded(RecordKind::Samples, item_id, prompt, Default::default(), |b| {
                let out = b.generate(prompt, &params)?;
                if out.len() != params.n {
                    return Err(GatewayError::Protocol(format!(
                        "asked for {} samples, got {}",
                        params.n,
                        out.len()
                    )));
                }
                Ok(out)
            })?;
        if responses.len() != params.n {
            return Err(GatewayError::Protocol(format!(
                "stored samples have {} responses, config asks for {}",
                responses.len(),
                params.n
            )));
        }
        Ok(responses)
    }

    pub fn score_candidate(
        &self,
        item_id: &str,
        prompt: &str,
        candidate: &str,
        channel: Option<&str>,
    ) -> Result<TokenLogprobSeq> {
        if candidate.is_empty() {
            return Err(GatewayError::InvalidRequest("candidate text is empty".into()));
        }
        let mut disc = serde_json::Map::new();
        disc.insert("candidate_sha256".into(), sha256_hex(candidate).into());
        disc.insert(
            "channel".into(),
            channel.map(Into::into).unwrap_or(serde_json::Value::Null),
        );
        let seq: TokenLogprobSeq = self.recorded(
            RecordKind::CandidateLogprobs,
            item_id,
            prompt,
            disc,
            |b| {
                let seq = b.teacher_force(prompt, candidate, channel)?;
                if seq.is_empty() {
                    return Err(GatewayError::Protocol("no tokens for candidate".into()));
                }
                let joined = seq.text();
                if joined != candidate {
                    return Err(GatewayError::TokenizationMismatch {
                        expected: candidate.to_string(),
                        joined,
                    });
                }
                seq.validate()?;
                Ok(seq)
            },
        )?;
        Ok(seq)
    }

    /// P(true) for `candidate`. Logprob mode falls back to sampling when the
    /// backend lacks next-token probabilities; the estimate records the mode.
    pub fn elicit_p_true(
        &self,
        item_id: &str,
        question: &str,
        candidate: &str,
        samples: Option<&[String]>,
    ) -> Result<PTrueEstimate> {
        let prompt = render_p_true_prompt(question, candidate, samples);
        let mode = self.cfg.p_true_mode;
        let m = self.cfg.p_true_samples;
        let temperature = self.cfg.temperature;
        let seed = self.cfg.request_seed;
        self.recorded(RecordKind::PTrue, item_id, &prompt, Default::default(), |b| {
            if mode == PTrueMode::Logprob {
                match b.true_false_probs(&prompt) {
                    Ok((pt, pf)) => {
                        let probability = normalize_true_false(pt, pf).ok_or_else(|| {
                            GatewayError::Protocol(format!(
                                "neither True nor False has probability mass ({pt}, {pf})"
                            ))
                        })?;
                        return Ok(PTrueEstimate {
                            probability,
                            mode: PTrueMode::Logprob,
                            continuations: None,
                        });
                    }
                    Err(GatewayError::Capability { .. }) => {
                        log::warn!(
                            "{}: no next-token logprobs, using sampled P(true)",
                            b.identity()
                        );
                    }
                    Err(e) => return Err(e),
                }
            }
            let params = SamplingParams {
                n: m,
                temperature,
                max_tokens: 1,
                stop: Vec::new(),
                seed,
                logprobs: false,
            };
            let out = b.generate(&prompt, &params).map_err(|e| match e {
                GatewayError::Capability { backend, .. } => GatewayError::Capability {
                    backend,
                    capability: "P(true) via logprobs or sampling".into(),
                },
                other => other,
            })?;
            let continuations: Vec<String> = out.into_iter().map(|r| r.text).collect();
            let hits = continuations.iter().filter(|c| is_true_continuation(c)).count();
            Ok(PTrueEstimate {
                probability: hits as f64 / continuations.len().max(1) as f64,
                mode: PTrueMode::Sampling,
                continuations: Some(continuations),
            })
        })
    }

    /// Binary correctness of `response` against `gold` from an LLM judge.
    /// Verbatim matches (up to whitespace) short-circuit without a call.
    pub fn judge_correctness(
        &self,
        item_id: &str,
        question: &str,
        response: &str,
        gold: &str,
    ) -> Result<u8> {
        if normalize_ws(response) == normalize_ws(gold) {
            return Ok(1);
        }
        let prompt = render_judge_prompt(question, response, gold);
        let params = SamplingParams {
            n: 1,
            temperature: Some(0.0),
            max_tokens: 4,
            stop: Vec::new(),
            seed: self.cfg.request_seed,
            logprobs: false,
        };
        let reply: String =
            self.recorded(RecordKind::Judge, item_id, &prompt, Default::default(), |b| {
                let out = b.generate(&prompt, &params)?;
                out.into_iter()
                    .next()
                    .map(|r| r.text)
                    .ok_or_else(|| GatewayError::Protocol("judge returned no choices".into()))
            })?;
        parse_judge_reply(&reply)
    }
}
