//! Blocking JSON-over-HTTP client with retry and a process-wide call counter.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde_json::Value;

use super::{GatewayError, Result, RetryPolicy};

static NETWORK_CALLS: AtomicUsize = AtomicUsize::new(0);

/// Number of HTTP requests attempted by this process, retries included.
pub fn network_calls() -> usize {
    NETWORK_CALLS.load(Ordering::SeqCst)
}

pub const API_KEY_ENV: &str = "MCQA_EVAL_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpClient {
    client: reqwest::blocking::Client,
    base: String,
    retry: RetryPolicy,
    bearer: Option<String>,
}

fn retryable_status(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl HttpClient {
    pub fn new(base: &str, retry: RetryPolicy, timeout: Duration, bearer: Option<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            client,
            base: base.trim_end_matches('/').to_string(),
            retry,
            bearer,
        })
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn post_json(&self, path: &str, body: &Value) -> Result<Value> {
        self.send(path, Some(body))
    }

    pub fn get_json(&self, path: &str) -> Result<Value> {
        self.send(path, None)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.retry.backoff_base_ms.saturating_mul(1u64 << attempt.min(16));
        // Jitter in [0.5, 1.0) of the exponential step; derived from the clock
        // because retry timing does not affect any recorded value.
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.subsec_nanos())
            .unwrap_or(0);
        let jitter = 0.5 + (nanos % 1000) as f64 / 2000.0;
        Duration::from_millis((base as f64 * jitter) as u64)
    }

    fn send(&self, path: &str, body: Option<&Value>) -> Result<Value> {
        let url = format!("{}/{}", self.base, path.trim_start_matches('/'));
        let max = self.retry.max_attempts.max(1);
        let mut last = String::new();
        let mut last_status = None;
        for attempt in 0..max {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            NETWORK_CALLS.fetch_add(1, Ordering::SeqCst);
            let mut req = match body {
                Some(b) => self.client.post(&url).json(b),
                None => self.client.get(&url),
            };
            if let Some(key) = &self.bearer {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Err(e) => {
                    last = e.to_string();
                    last_status = None;
                    log::warn!("{url}: attempt {} failed: {last}", attempt + 1);
                }
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.text().map_err(|e| GatewayError::Transport {
                        attempts: attempt + 1,
                        message: e.to_string(),
                    })?;
                    if (200..300).contains(&status) {
                        return serde_json::from_str(&text).map_err(|e| {
                            GatewayError::Protocol(format!("{url}: invalid JSON body: {e}"))
                        });
                    }
                    if !retryable_status(status) {
                        return Err(GatewayError::Backend { status, body: text });
                    }
                    log::warn!("{url}: attempt {} got HTTP {status}", attempt + 1);
                    last_status = Some(status);
                    last = text;
                }
            }
        }
        Err(match last_status {
            Some(status) => GatewayError::Backend { status, body: last },
            None => GatewayError::Transport {
                attempts: max,
                message: last,
            },
        })
    }
}
