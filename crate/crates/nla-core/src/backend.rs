//! Option-logit acquisition: an HTTP client for logprob-capable inference
//! servers, a deterministic planted-profile mock, and a content-addressed
//! on-disk cache that wraps either one.

pub mod cache;
pub mod http;
pub mod mock;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NlaError, Result};
use crate::prompting::Prompt;

/// Raw per-label logits (or log-probabilities; softmax is shift-invariant,
/// so downstream consumers treat them identically) for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionLogits {
    pub model_id: String,
    /// SHA-256 of the prompt text these logits answer.
    pub prompt_hash: String,
    /// One finite value per option label of the prompt.
    pub logits: BTreeMap<char, f64>,
}

impl OptionLogits {
    /// Checks the logits cover exactly `labels` with finite values.
    pub fn validate_labels<I: IntoIterator<Item = char>>(&self, labels: I) -> Result<()> {
        let expected: Vec<char> = labels.into_iter().collect();
        for &label in &expected {
            match self.logits.get(&label) {
                None => {
                    return Err(NlaError::Backend(format!(
                        "logits missing option label {label:?}"
                    )))
                }
                Some(v) if !v.is_finite() => {
                    return Err(NlaError::Backend(format!(
                        "non-finite logit for option label {label:?}"
                    )))
                }
                Some(_) => {}
            }
        }
        if self.logits.len() != expected.len() {
            return Err(NlaError::Backend(format!(
                "logits cover {} labels, prompt has {}",
                self.logits.len(),
                expected.len()
            )));
        }
        Ok(())
    }
}

/// Retry policy for transient backend failures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts including the first (network errors and 5xx retry;
    /// 4xx never does).
    pub max_attempts: u32,
    /// First backoff sleep; doubles each retry.
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_base_ms: 250,
        }
    }
}

/// Configuration for the HTTP backend and the scoring fan-out.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Completions-style endpoint, e.g. `http://host:8000/v1/completions`.
    pub endpoint: String,
    pub model: String,
    /// Top-N log-probabilities requested per generated token. Must cover the
    /// widest option set (6 labels) with headroom for non-label tokens.
    pub top_n: u32,
    /// Upper bound on concurrent in-flight requests.
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    /// When a label is absent from the returned top-N: `false` fails the
    /// run, `true` assigns floor logit (min returned logprob - 5). Silent
    /// zero-probability would skew fair averages downward, so lenient mode
    /// is opt-in.
    pub lenient_missing_labels: bool,
    /// Request timeout in seconds.
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: "http://127.0.0.1:8000/v1/completions".into(),
            model: "model".into(),
            top_n: 20,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            lenient_missing_labels: false,
            timeout_secs: 120,
        }
    }
}

/// A source of per-option logits. Implementations must be safe to call from
/// multiple threads; results are merged deterministically by task key, so
/// call order never affects output.
pub trait ScoreBackend: Send + Sync {
    /// Identifier recorded in results and mixed into cache keys.
    fn model_id(&self) -> &str;

    /// Top-N request size, part of the cache key (0 when not applicable).
    fn top_n(&self) -> u32 {
        0
    }

    fn score_options(&self, prompt: &Prompt) -> Result<OptionLogits>;
}

/// SHA-256 of a prompt's text, hex encoded.
pub fn prompt_sha(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Content address for a backend call: full prompt text + model id + top-N.
pub fn cache_key(model_id: &str, top_n: u32, prompt_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model_id.as_bytes());
    hasher.update(b"\n");
    hasher.update(top_n.to_le_bytes());
    hasher.update(b"\n");
    hasher.update(prompt_text.as_bytes());
    hex::encode(hasher.finalize())
}
