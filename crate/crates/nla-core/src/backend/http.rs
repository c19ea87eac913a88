//! Completions-protocol HTTP backend.
//!
//! Sends each prompt as a single-token, temperature-zero completion request
//! with per-token top-N log-probabilities enabled, then reads the option
//! labels out of the first generated token's candidate list. Servers
//! tokenize the labels differently, so an exact token (`"A"`) is preferred
//! and a leading-space variant (`" A"`) accepted as fallback.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::{prompt_sha, BackendConfig, OptionLogits, ScoreBackend};
use crate::error::{NlaError, Result};
use crate::prompting::Prompt;

/// Environment variable holding the bearer token, if the server needs one.
pub const API_KEY_ENV: &str = "NLA_API_KEY";

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    logprobs: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    logprobs: Option<LogprobBlock>,
}

#[derive(Deserialize)]
struct LogprobBlock {
    top_logprobs: Vec<BTreeMap<String, f64>>,
}

/// Blocking HTTP client for a logprob-capable completions endpoint.
pub struct HttpBackend {
    config: BackendConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl HttpBackend {
    /// Builds a backend, taking the bearer token from `NLA_API_KEY` when set.
    pub fn new(config: BackendConfig) -> Result<Self> {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(config: BackendConfig, api_key: Option<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| NlaError::Config(format!("http client: {e}")))?;
        Ok(HttpBackend {
            config,
            client,
            api_key,
        })
    }

    /// One POST without retry. `Ok(Err(status, body))` is an HTTP-level
    /// failure the retry loop classifies; `Err` is a network failure.
    fn post_once(
        &self,
        body: &CompletionRequest,
    ) -> std::result::Result<std::result::Result<CompletionResponse, (u16, String)>, reqwest::Error>
    {
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send()?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Ok(Err((status.as_u16(), text)));
        }
        Ok(Ok(resp.json::<CompletionResponse>()?))
    }

    fn request_with_retry(&self, prompt_text: &str) -> Result<CompletionResponse> {
        let body = CompletionRequest {
            model: &self.config.model,
            prompt: prompt_text,
            max_tokens: 1,
            temperature: 0.0,
            logprobs: self.config.top_n,
        };
        let attempts = self.config.retry.max_attempts.max(1);
        let mut last_failure = String::new();
        for attempt in 1..=attempts {
            match self.post_once(&body) {
                Ok(Ok(resp)) => return Ok(resp),
                Ok(Err((status, text))) if (400..500).contains(&status) => {
                    return Err(NlaError::Transport(format!(
                        "backend rejected request (HTTP {status}): {}",
                        text.trim()
                    )));
                }
                Ok(Err((status, text))) => {
                    last_failure = format!("HTTP {status}: {}", text.trim());
                }
                Err(e) => {
                    last_failure = e.to_string();
                }
            }
            if attempt < attempts {
                let backoff = self.config.retry.backoff_base_ms << (attempt - 1);
                std::thread::sleep(Duration::from_millis(backoff));
            }
        }
        Err(NlaError::Transport(format!(
            "backend unreachable after {attempts} attempts: {last_failure}"
        )))
    }

    /// Pulls one logit per option label from the first token's candidates.
    fn extract_labels(
        &self,
        candidates: &BTreeMap<String, f64>,
        prompt: &Prompt,
    ) -> Result<BTreeMap<char, f64>> {
        let floor = candidates
            .values()
            .fold(f64::INFINITY, |acc, &v| acc.min(v))
            - 5.0;
        let mut logits = BTreeMap::new();
        for label in prompt.labels.labels() {
            let exact = candidates.get(&label.to_string());
            let spaced = candidates.get(&format!(" {label}"));
            match exact.or(spaced) {
                Some(&v) => {
                    logits.insert(label, v);
                }
                None if self.config.lenient_missing_labels => {
                    logits.insert(label, floor);
                }
                None => {
                    return Err(NlaError::Backend(format!(
                        "option label {label:?} missing from top-{} logprobs; \
                         raise top_n or enable lenient_missing_labels",
                        self.config.top_n
                    )));
                }
            }
        }
        Ok(logits)
    }
}

impl ScoreBackend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn top_n(&self) -> u32 {
        self.config.top_n
    }

    fn score_options(&self, prompt: &Prompt) -> Result<OptionLogits> {
        let resp = self.request_with_retry(&prompt.text)?;
        let choice = resp
            .choices
            .first()
            .ok_or_else(|| NlaError::Backend("response has no choices".into()))?;
        let block = choice
            .logprobs
            .as_ref()
            .ok_or_else(|| NlaError::Backend("response has no logprobs block".into()))?;
        let candidates = block.top_logprobs.first().ok_or_else(|| {
            NlaError::Backend("logprobs block has no entries for the first token".into())
        })?;
        if candidates.is_empty() {
            return Err(NlaError::Backend(
                "empty top_logprobs map for the first token".into(),
            ));
        }
        let logits = self.extract_labels(candidates, prompt)?;
        Ok(OptionLogits {
            model_id: self.config.model.clone(),
            prompt_hash: prompt_sha(&prompt.text),
            logits,
        })
    }
}
