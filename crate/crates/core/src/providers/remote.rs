//! HTTP providers: a batch embedding endpoint and a chat-completion LLM.

use std::time::Duration;

use log::debug;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{bounded_map, EmbeddingVector, JudgeResult, LanguageModel, TextEmbedder};
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "SCORE_API_KEY";

fn build_client(timeout: Duration) -> Result<Client> {
    Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| Error::Transport {
            status: None,
            message: e.to_string(),
        })
}

fn join_url(endpoint: &str, path: &str) -> String {
    format!("{}/{}", endpoint.trim_end_matches('/'), path)
}

/// POSTs `body` as JSON, retrying connection failures, 429 and 5xx.
fn post_json<T: for<'de> Deserialize<'de>>(
    client: &Client,
    url: &str,
    api_key: Option<&str>,
    body: &serde_json::Value,
    max_retries: u32,
) -> Result<T> {
    let mut attempt = 0;
    loop {
        let mut req = client.post(url).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        let retryable = match req.send() {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    return resp.json::<T>().map_err(|e| Error::Protocol(e.to_string()));
                }
                let text = resp.text().unwrap_or_default();
                let err = Error::Transport {
                    status: Some(status.as_u16()),
                    message: format!("{url}: {text}"),
                };
                if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
                    err
                } else {
                    return Err(err);
                }
            }
            Err(e) => Error::Transport {
                status: e.status().map(|s| s.as_u16()),
                message: format!("{url}: {e}"),
            },
        };
        if attempt >= max_retries {
            return Err(retryable);
        }
        let backoff = Duration::from_millis(100 << attempt.min(6));
        debug!("retrying {url} after {backoff:?}: {retryable}");
        std::thread::sleep(backoff);
        attempt += 1;
    }
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for `POST {endpoint}/embed` with body `{"texts": [...]}`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    endpoint: String,
    client: Client,
    api_key: Option<String>,
    dim: usize,
    batch_size: usize,
    concurrency: usize,
    max_retries: u32,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, dim: usize, timeout: Duration) -> Result<Self> {
        Ok(RemoteEmbedder {
            endpoint: endpoint.into(),
            client: build_client(timeout)?,
            api_key: std::env::var(API_KEY_ENV).ok(),
            dim,
            batch_size: 64,
            concurrency: 4,
            max_retries: 2,
        })
    }

    pub fn with_concurrency(mut self, concurrency: usize) -> Self {
        self.concurrency = concurrency.max(1);
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    fn embed_chunk(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let url = join_url(&self.endpoint, "embed");
        let resp: EmbedResponse = post_json(
            &self.client,
            &url,
            self.api_key.as_deref(),
            &json!({ "texts": texts }),
            self.max_retries,
        )?;
        if resp.vectors.len() != texts.len() {
            return Err(Error::Protocol(format!(
                "sent {} texts, received {} vectors",
                texts.len(),
                resp.vectors.len()
            )));
        }
        resp.vectors
            .iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(Error::Protocol(format!(
                        "vector dimension {} differs from expected {}",
                        v.len(),
                        self.dim
                    )));
                }
                Ok(EmbeddingVector::from_raw(v))
            })
            .collect()
    }
}

impl TextEmbedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let chunks: Vec<&[String]> = texts.chunks(self.batch_size).collect();
        let results = bounded_map(&chunks, self.concurrency, |chunk| self.embed_chunk(chunk));
        let mut out = Vec::with_capacity(texts.len());
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteLlmConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub top_logprobs: u32,
    pub max_completion_tokens: u32,
}

impl Default for RemoteLlmConfig {
    fn default() -> Self {
        RemoteLlmConfig {
            endpoint: "http://localhost:8000/v1".into(),
            model: "default".into(),
            timeout_secs: 60,
            max_retries: 2,
            top_logprobs: 20,
            max_completion_tokens: 512,
        }
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: Option<ChatMessage>,
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChoiceLogprobs {
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Deserialize)]
struct TokenLogprob {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<TopLogprob>,
}

#[derive(Debug, Deserialize)]
struct TopLogprob {
    token: String,
    logprob: f64,
}

/// Chat-completion client (OpenAI-compatible `POST {endpoint}/chat/completions`).
#[derive(Debug, Clone)]
pub struct RemoteLlm {
    config: RemoteLlmConfig,
    client: Client,
    api_key: Option<String>,
}

impl RemoteLlm {
    pub fn new(config: RemoteLlmConfig) -> Result<Self> {
        Ok(RemoteLlm {
            client: build_client(Duration::from_secs(config.timeout_secs))?,
            api_key: std::env::var(API_KEY_ENV).ok(),
            config,
        })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    fn chat(&self, body: serde_json::Value) -> Result<ChatResponse> {
        let url = join_url(&self.config.endpoint, "chat/completions");
        post_json(
            &self.client,
            &url,
            self.api_key.as_deref(),
            &body,
            self.config.max_retries,
        )
    }
}

impl LanguageModel for RemoteLlm {
    fn complete(&self, prompt: &str) -> Result<String> {
        if prompt.trim().is_empty() {
            return Err(Error::EmptyField("prompt".into()));
        }
        let resp = self.chat(json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
            "max_tokens": self.config.max_completion_tokens,
        }))?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message)
            .and_then(|m| m.content)
            .ok_or_else(|| Error::Protocol("response carried no message text".into()))
    }

    fn judge(&self, prompt: &str) -> Result<JudgeResult> {
        if prompt.trim().is_empty() {
            return Err(Error::EmptyField("prompt".into()));
        }
        let resp = self.chat(json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
            "max_tokens": 1,
            "logprobs": true,
            "top_logprobs": self.config.top_logprobs,
        }))?;
        let first = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.logprobs)
            .and_then(|l| l.content)
            .and_then(|c| c.into_iter().next())
            .ok_or_else(|| Error::Protocol("response carried no token logprobs".into()))?;
        let mut candidates: Vec<(String, f64)> = first
            .top_logprobs
            .into_iter()
            .map(|t| (t.token, t.logprob))
            .collect();
        candidates.push((first.token, first.logprob));
        extract_yes_no(&candidates)
    }
}

/// Picks the best logprob for "Yes" and for "No" (exact case, leading
/// whitespace allowed). When only one of the two is listed, the other is
/// bounded by the smallest listed logprob.
pub fn extract_yes_no(candidates: &[(String, f64)]) -> Result<JudgeResult> {
    let best = |word: &str| {
        candidates
            .iter()
            .filter(|(tok, _)| tok.trim_start() == word)
            .map(|&(_, lp)| lp)
            .fold(None, |acc: Option<f64>, lp| Some(acc.map_or(lp, |a| a.max(lp))))
    };
    let floor = candidates
        .iter()
        .map(|&(_, lp)| lp)
        .fold(f64::INFINITY, f64::min);
    match (best("Yes"), best("No")) {
        (None, None) => Err(Error::MissingToken),
        (yes, no) => Ok(JudgeResult {
            logit_yes: yes.unwrap_or(floor),
            logit_no: no.unwrap_or(floor),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(items: &[(&str, f64)]) -> Vec<(String, f64)> {
        items.iter().map(|&(t, l)| (t.to_string(), l)).collect()
    }

    #[test]
    fn extracts_best_variant() {
        let r = extract_yes_no(&c(&[("Yes", -0.3), (" Yes", -0.1), ("No", -1.4), ("yes", 0.0)])).unwrap();
        assert_eq!((r.logit_yes, r.logit_no), (-0.1, -1.4));
    }

    #[test]
    fn missing_both_is_an_error() {
        assert!(matches!(
            extract_yes_no(&c(&[("Maybe", -0.1), ("yes", -0.2)])),
            Err(Error::MissingToken)
        ));
    }

    #[test]
    fn missing_one_uses_floor() {
        let r = extract_yes_no(&c(&[("Yes", -0.2), ("The", -3.5)])).unwrap();
        assert_eq!((r.logit_yes, r.logit_no), (-0.2, -3.5));
    }
}
