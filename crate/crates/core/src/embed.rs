//! Text embeddings and cosine similarity.
//!
//! Every provider sees text that has already been normalized by
//! [`normalize_text`]: lowercased, with whitespace runs collapsed to a single
//! space. The bundled [`HashedTrigramProvider`] needs no model weights and is
//! fully deterministic, which keeps retrieval and element mapping testable
//! offline. Remote encoders plug in through the same [`EmbeddingProvider`]
//! trait.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::UIElement;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("text is empty after normalization")]
    EmptyText,
    #[error("embedding provider failed: {0}")]
    ProviderFailure(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine of a zero vector is undefined")]
    ZeroVector,
    #[error("element carries no text, content description, or resource id")]
    AllFieldsEmpty,
}

/// Dense real-valued embedding of fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Wraps raw values, rejecting non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(EmbedError::ProviderFailure(format!(
                "non-finite embedding entry {bad}"
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }
}

/// A deterministic text encoder with a fixed output dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    /// Encodes text already passed through [`normalize_text`].
    fn embed_normalized(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

/// Lowercases and collapses every whitespace run into a single space.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Normalizes `text` and encodes it with `provider`, checking the result
/// against the provider's declared dimension.
pub fn embed_text(
    provider: &dyn EmbeddingProvider,
    text: &str,
) -> Result<EmbeddingVector, EmbedError> {
    let normalized = normalize_text(text);
    if normalized.is_empty() {
        return Err(EmbedError::EmptyText);
    }
    let vector = provider.embed_normalized(&normalized)?;
    if vector.dimension() != provider.dimension() {
        return Err(EmbedError::ProviderFailure(format!(
            "{} returned {} values, declared dimension is {}",
            provider.name(),
            vector.dimension(),
            provider.dimension()
        )));
    }
    Ok(vector)
}

/// Cosine similarity `<a, b> / (|a| |b|)`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dimension() != b.dimension() {
        return Err(EmbedError::DimensionMismatch {
            left: a.dimension(),
            right: b.dimension(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values().iter().zip(b.values()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Canonical text used to embed a UI element: text, content description and
/// the resource-id segment after the last `/`, skipping empty parts.
pub fn element_repr(element: &UIElement) -> Result<String, EmbedError> {
    let id_suffix = resource_id_suffix(&element.resource_id);
    let parts = [element.text.as_str(), element.content_desc.as_str(), id_suffix];
    let joined = parts
        .iter()
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    let repr = normalize_text(&joined);
    if repr.is_empty() {
        Err(EmbedError::AllFieldsEmpty)
    } else {
        Ok(repr)
    }
}

pub(crate) fn resource_id_suffix(resource_id: &str) -> &str {
    match resource_id.rfind('/') {
        Some(pos) => &resource_id[pos + 1..],
        None => resource_id,
    }
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |hash, &b| (hash ^ b as u64).wrapping_mul(PRIME))
}

/// Character trigrams of the space-padded text, hashed into fixed buckets
/// with term-frequency weights and L2 normalization.
#[derive(Debug, Clone)]
pub struct HashedTrigramProvider {
    dimension: usize,
}

impl HashedTrigramProvider {
    pub const NAME: &'static str = "hashed-trigram-256";
    pub const DEFAULT_DIMENSION: usize = 256;

    pub fn new() -> Self {
        Self {
            dimension: Self::DEFAULT_DIMENSION,
        }
    }
}

impl Default for HashedTrigramProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl EmbeddingProvider for HashedTrigramProvider {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_normalized(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let padded: Vec<char> = std::iter::once(' ')
            .chain(text.chars())
            .chain(std::iter::once(' '))
            .collect();
        let mut counts = vec![0.0f64; self.dimension];
        let mut buf = String::with_capacity(12);
        for window in padded.windows(3) {
            buf.clear();
            buf.extend(window);
            let bucket = (fnv1a64(buf.as_bytes()) % self.dimension as u64) as usize;
            counts[bucket] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        for c in &mut counts {
            *c /= norm;
        }
        EmbeddingVector::new(counts)
    }
}

#[cfg(feature = "remote")]
pub use remote::RemoteEmbeddingProvider;

#[cfg(feature = "remote")]
mod remote {
    use super::*;
    use std::time::Duration;

    #[derive(Serialize)]
    struct EmbedRequest<'a> {
        text: &'a str,
    }

    #[derive(Deserialize)]
    struct EmbedResponse {
        vector: Vec<f64>,
    }

    /// Encoder served over HTTP: `POST {"text"}` answered by `{"vector"}`.
    pub struct RemoteEmbeddingProvider {
        name: String,
        endpoint: String,
        dimension: usize,
        agent: ureq::Agent,
    }

    impl RemoteEmbeddingProvider {
        pub fn new(
            name: impl Into<String>,
            endpoint: impl Into<String>,
            dimension: usize,
            timeout: Duration,
        ) -> Self {
            Self {
                name: name.into(),
                endpoint: endpoint.into(),
                dimension,
                agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            }
        }
    }

    impl EmbeddingProvider for RemoteEmbeddingProvider {
        fn name(&self) -> &str {
            &self.name
        }

        fn dimension(&self) -> usize {
            self.dimension
        }

        fn embed_normalized(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
            let response = self
                .agent
                .post(&self.endpoint)
                .send_json(EmbedRequest { text })
                .map_err(|e| EmbedError::ProviderFailure(e.to_string()))?;
            let body: EmbedResponse = response
                .into_json()
                .map_err(|e| EmbedError::ProviderFailure(format!("bad response body: {e}")))?;
            EmbeddingVector::new(body.vector)
        }
    }
}
