use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    estimate_tokens, price, ChatMessage, LlmClient, LlmError, LlmExchange, PriceModel,
    PromptMessages,
};

pub const API_KEY_ENV: &str = "CAT_LLM_API_KEY";

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
    usage: Option<WireUsage>,
}

/// Chat-completion client speaking `{"model", "messages"}` →
/// `{"text", "usage"}` over HTTP.
pub struct RemoteLlmClient {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    price_model: PriceModel,
    agent: ureq::Agent,
}

impl RemoteLlmClient {
    /// Reads the API key from `CAT_LLM_API_KEY` when set.
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        timeout: Duration,
        price_model: PriceModel,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            price_model,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }
}

fn is_timeout(err: &ureq::Transport) -> bool {
    use std::error::Error as _;
    let mut source = err.source();
    while let Some(e) = source {
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            if matches!(
                io.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            ) {
                return true;
            }
        }
        source = e.source();
    }
    err.to_string().contains("timed out")
}

impl LlmClient for RemoteLlmClient {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &PromptMessages) -> Result<LlmExchange, LlmError> {
        let started = Instant::now();
        let mut request = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        let response = request
            .send_json(WireRequest {
                model: &self.model,
                messages: prompt.messages(),
            })
            .map_err(|e| match e {
                ureq::Error::Status(status, resp) => LlmError::ProviderError {
                    status,
                    body: resp.into_string().unwrap_or_default(),
                },
                ureq::Error::Transport(t) if is_timeout(&t) => LlmError::Timeout,
                ureq::Error::Transport(t) => LlmError::ProviderError {
                    status: 0,
                    body: t.to_string(),
                },
            })?;
        let status = response.status();
        let body: WireResponse = response.into_json().map_err(|e| {
            if e.kind() == std::io::ErrorKind::TimedOut {
                LlmError::Timeout
            } else {
                LlmError::ProviderError {
                    status,
                    body: format!("unreadable response: {e}"),
                }
            }
        })?;
        let (prompt_tokens, completion_tokens) = match body.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (prompt.estimated_tokens(), estimate_tokens(&body.text)),
        };
        Ok(LlmExchange {
            model: self.model.clone(),
            prompt: prompt.clone(),
            completion_text: body.text,
            prompt_tokens,
            completion_tokens,
            latency_ms: started.elapsed().as_millis() as u64,
            price: price(prompt_tokens, completion_tokens, &self.price_model),
        })
    }
}
