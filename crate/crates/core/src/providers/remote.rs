//! HTTP client for external logit servers.
//!
//! `POST {endpoint}/v1/logits` with `{"context_ids": [..], "vocab_size": n}`
//! (plus a reserved, currently always-null `session_id`), answered by
//! `{"logits": [..]}`. Replies are validated, never reinterpreted.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{check_context, validate_logits, Capabilities, LogitProvider, ProviderError};
use crate::types::{LogitVector, TokenId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitsRequest {
    pub context_ids: Vec<TokenId>,
    pub vocab_size: usize,
    pub session_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitsResponse {
    pub logits: Vec<f64>,
}

pub struct RemoteProvider {
    endpoint: String,
    vocab_size: usize,
    vocab_ref: String,
    eos: Option<TokenId>,
    max_attempts: u32,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(endpoint: impl Into<String>, vocab_size: usize, vocab_ref: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            vocab_size,
            vocab_ref: vocab_ref.into(),
            eos: None,
            max_attempts: 3,
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(30))
                .build(),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.agent = ureq::AgentBuilder::new().timeout(timeout).build();
        self
    }

    pub fn with_max_attempts(mut self, attempts: u32) -> Self {
        self.max_attempts = attempts.max(1);
        self
    }

    pub fn with_eos(mut self, eos: Option<TokenId>) -> Self {
        self.eos = eos;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn url(&self) -> String {
        format!("{}/v1/logits", self.endpoint)
    }

    fn attempt(&self, body: &LogitsRequest) -> Result<String, (String, bool)> {
        match self.agent.post(&self.url()).send_json(body) {
            Ok(resp) => resp.into_string().map_err(|e| (e.to_string(), true)),
            Err(ureq::Error::Status(code, resp)) => {
                let detail = resp.into_string().unwrap_or_default();
                Err((format!("http status {code}: {detail}"), code >= 500))
            }
            Err(ureq::Error::Transport(t)) => Err((t.to_string(), true)),
        }
    }
}

/// Parses a reply body, mapping bare `NaN`/`Infinity` literals (which some
/// servers emit) to a non-finite error rather than a syntax error.
pub(crate) fn parse_reply(body: &str, expected: usize) -> Result<LogitsResponse, ProviderError> {
    let reply: LogitsResponse = match serde_json::from_str(body) {
        Ok(r) => r,
        Err(e) => {
            let value: Result<serde_json::Value, _> = serde_json::from_str(body);
            if let Ok(serde_json::Value::Object(obj)) = value {
                if let Some(serde_json::Value::Array(items)) = obj.get("logits") {
                    if let Some(index) = items.iter().position(|v| !v.is_number()) {
                        return Err(ProviderError::NonFinite { index });
                    }
                }
            } else if body.contains("NaN") || body.contains("Infinity") {
                return Err(ProviderError::NonFinite {
                    index: non_finite_position(body),
                });
            }
            return Err(ProviderError::Malformed(e.to_string()));
        }
    };
    validate_logits(&reply.logits, expected)?;
    Ok(reply)
}

fn non_finite_position(body: &str) -> usize {
    let Some(start) = body.find('[') else {
        return 0;
    };
    body[start + 1..]
        .split(',')
        .position(|item| {
            let item = item.trim().trim_end_matches([']', '}']).trim();
            item.parse::<f64>().map_or(true, |v| !v.is_finite())
        })
        .unwrap_or(0)
}

impl LogitProvider for RemoteProvider {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn vocab_ref(&self) -> &str {
        &self.vocab_ref
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            deterministic: false,
            remote: true,
        }
    }

    fn eos_id(&self) -> Option<TokenId> {
        self.eos
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector, ProviderError> {
        check_context(context, self.vocab_size)?;
        let body = LogitsRequest {
            context_ids: context.to_vec(),
            vocab_size: self.vocab_size,
            session_id: None,
        };
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(text) => return parse_reply(&text, self.vocab_size).map(|r| r.logits),
                Err((message, retryable)) => {
                    if !retryable || attempts >= self.max_attempts {
                        return Err(ProviderError::Transport {
                            endpoint: self.url(),
                            attempts,
                            message,
                            retryable,
                        });
                    }
                    std::thread::sleep(Duration::from_millis(50 * attempts as u64));
                }
            }
        }
    }
}
