//! LLM client abstraction, token accounting and pricing.

mod fixture;
mod price;
#[cfg(feature = "remote")]
mod remote;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use fixture::{FixtureClient, FixtureMode, FixtureRecord, FixtureUsage};
pub use price::{estimate_tokens, price, Money, PriceModel, MONEY_SCALE};
#[cfg(feature = "remote")]
pub use remote::{RemoteLlmClient, API_KEY_ENV};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("llm request timed out")]
    Timeout,
    #[error("llm provider error (status {status}): {body}")]
    ProviderError { status: u16, body: String },
    #[error("no recorded fixture for prompt digest {0}")]
    FixtureMiss(String),
    #[error("fixture store error: {0}")]
    FixtureStore(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// Ordered chat messages sent as one request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMessages {
    messages: Vec<ChatMessage>,
    estimated_tokens: u64,
}

impl PromptMessages {
    /// Panics on an empty message list.
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        assert!(!messages.is_empty(), "a prompt needs at least one message");
        let estimated_tokens = messages.iter().map(|m| estimate_tokens(&m.content)).sum();
        Self {
            messages,
            estimated_tokens,
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(vec![ChatMessage {
            role: Role::User,
            content: content.into(),
        }])
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn estimated_tokens(&self) -> u64 {
        self.estimated_tokens
    }

    /// All message contents joined by blank lines.
    pub fn text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    /// Hex SHA-256 of the canonical JSON form `[{"role":…,"content":…}, …]`.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(&self.messages).expect("messages serialize");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// One prompt/completion round trip with its usage and cost.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub model: String,
    pub prompt: PromptMessages,
    pub completion_text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    pub price: Money,
}

pub trait LlmClient: Send + Sync {
    fn model(&self) -> &str;
    fn complete(&self, prompt: &PromptMessages) -> Result<LlmExchange, LlmError>;
}

impl<T: LlmClient + ?Sized> LlmClient for Box<T> {
    fn model(&self) -> &str {
        (**self).model()
    }

    fn complete(&self, prompt: &PromptMessages) -> Result<LlmExchange, LlmError> {
        (**self).complete(prompt)
    }
}

impl<T: LlmClient + ?Sized> LlmClient for std::sync::Arc<T> {
    fn model(&self) -> &str {
        (**self).model()
    }

    fn complete(&self, prompt: &PromptMessages) -> Result<LlmExchange, LlmError> {
        (**self).complete(prompt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_depends_on_roles_and_content() {
        let a = PromptMessages::user("hello");
        let b = PromptMessages::new(vec![ChatMessage {
            role: Role::System,
            content: "hello".into(),
        }]);
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), PromptMessages::user("hello").digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn estimated_tokens_sum_per_message() {
        let p = PromptMessages::new(vec![
            ChatMessage { role: Role::System, content: "abcde".into() },
            ChatMessage { role: Role::User, content: "abc".into() },
        ]);
        assert_eq!(p.estimated_tokens(), 3);
    }
}
