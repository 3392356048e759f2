//! Deterministic in-process backend driven by closures. Used by tests and by
//! the offline fixture generator; it never touches the network.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::{Backend, Result, SampledResponse, SamplingParams, TokenLogprob, TokenLogprobSeq};

type Sampler = dyn Fn(&str, &SamplingParams) -> Vec<String> + Send + Sync;
type Scorer = dyn Fn(&str, &str, Option<&str>) -> TokenLogprobSeq + Send + Sync;
type Truth = dyn Fn(&str) -> Result<(f64, f64)> + Send + Sync;

/// Split text into word pieces that carry their leading whitespace, so the
/// pieces concatenate back to the input.
pub fn word_pieces(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut cur = String::new();
    let mut seen_word = false;
    for c in text.chars() {
        if c.is_whitespace() && seen_word {
            out.push(std::mem::take(&mut cur));
            seen_word = false;
        }
        if !c.is_whitespace() {
            seen_word = true;
        }
        cur.push(c);
    }
    if !cur.is_empty() {
        match out.last_mut() {
            Some(last) if !seen_word => last.push_str(&cur),
            _ => out.push(cur),
        }
    }
    out
}

fn default_scorer(prompt: &str, completion: &str, channel: Option<&str>) -> TokenLogprobSeq {
    let tokens = word_pieces(completion)
        .into_iter()
        .enumerate()
        .map(|(i, piece)| {
            let h = super::sha256_hex(&format!("{prompt}\u{0}{i}\u{0}{piece}"));
            let unit = u32::from_str_radix(&h[..8], 16).expect("hex prefix") as f64 / u32::MAX as f64;
            let mut t = TokenLogprob::new(piece, -0.05 - 2.0 * unit);
            if channel.is_some() {
                t.attention_weight = Some(0.5 + unit);
            }
            t
        })
        .collect();
    TokenLogprobSeq {
        tokens,
        channel: channel.map(str::to_string),
    }
}

pub struct ScriptedBackend {
    name: String,
    sampler: Box<Sampler>,
    scorer: Box<Scorer>,
    truth: Box<Truth>,
    calls: Arc<AtomicUsize>,
}

impl Default for ScriptedBackend {
    fn default() -> Self {
        Self {
            name: "scripted".to_string(),
            sampler: Box::new(|_, p| (0..p.n).map(|i| format!("answer {i}")).collect()),
            scorer: Box::new(default_scorer),
            truth: Box::new(|_| Ok((0.5, 0.5))),
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }
}

impl ScriptedBackend {
    pub fn named(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn with_sampler(
        mut self,
        f: impl Fn(&str, &SamplingParams) -> Vec<String> + Send + Sync + 'static,
    ) -> Self {
        self.sampler = Box::new(f);
        self
    }

    pub fn with_scorer(
        mut self,
        f: impl Fn(&str, &str, Option<&str>) -> TokenLogprobSeq + Send + Sync + 'static,
    ) -> Self {
        self.scorer = Box::new(f);
        self
    }

    pub fn with_truth(mut self, f: impl Fn(&str) -> Result<(f64, f64)> + Send + Sync + 'static) -> Self {
        self.truth = Box::new(f);
        self
    }

    /// Shared counter of backend calls made through this instance.
    pub fn call_counter(&self) -> Arc<AtomicUsize> {
        Arc::clone(&self.calls)
    }

    fn tick(&self) {
        self.calls.fetch_add(1, Ordering::SeqCst);
    }
}

impl Backend for ScriptedBackend {
    fn identity(&self) -> String {
        self.name.clone()
    }

    fn generate(&self, prompt: &str, params: &SamplingParams) -> Result<Vec<SampledResponse>> {
        self.tick();
        Ok((self.sampler)(prompt, params)
            .into_iter()
            .map(SampledResponse::text)
            .collect())
    }

    fn teacher_force(
        &self,
        prompt: &str,
        completion: &str,
        channel: Option<&str>,
    ) -> Result<TokenLogprobSeq> {
        self.tick();
        Ok((self.scorer)(prompt, completion, channel))
    }

    fn true_false_probs(&self, prompt: &str) -> Result<(f64, f64)> {
        self.tick();
        (self.truth)(prompt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_pieces_round_trip() {
        for text in ["blue sky", " leading", "trailing ", "a  b\tc", "", "one"] {
            assert_eq!(word_pieces(text).concat(), text);
        }
        assert_eq!(word_pieces("blue sky"), ["blue", " sky"]);
    }

    #[test]
    fn default_scorer_is_deterministic_and_valid() {
        let a = default_scorer("p", "the red fox", Some("csl"));
        assert_eq!(a, default_scorer("p", "the red fox", Some("csl")));
        assert_eq!(a.text(), "the red fox");
        a.validate().unwrap();
        assert!(a.tokens.iter().all(|t| t.attention_weight.is_some()));
    }
}
