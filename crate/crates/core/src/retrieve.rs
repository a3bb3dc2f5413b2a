//! Exact cosine top-k retrieval over example descriptions.
//!
//! # Index file layout
//!
//! Line-delimited JSON. The first line is a header object:
//!
//! ```text
//! {"format_version":1,"provider_name":"hashed-trigram-256","dimension":256,
//!  "source_digest":"<sha256 of the example store>","entry_count":3}
//! ```
//!
//! followed by exactly `entry_count` lines `{"id":"…","vector":[…]}` in corpus
//! order. Floats are written in shortest round-trip form, so a rebuild from
//! the same corpus and provider is byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ExampleSet, RetrievalExample};
use crate::embed::{cosine, embed_text, EmbedError, EmbeddingProvider, EmbeddingVector};

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrieveError {
    #[error("cannot index an empty example set")]
    EmptySet,
    #[error("embedding example {id:?} failed: {error}")]
    ExampleEmbedding { id: String, error: EmbedError },
    #[error("embedding query failed: {0}")]
    QueryEmbedding(EmbedError),
    #[error("index was built with provider {index:?}, query uses {query:?}")]
    ProviderMismatch { index: String, query: String },
    #[error("index io failure: {0}")]
    IoFailure(String),
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("index digest {index} does not match example set digest {set}")]
    DigestMismatch { index: String, set: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexHeader {
    format_version: u32,
    provider_name: String,
    dimension: usize,
    source_digest: String,
    entry_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    provider_name: String,
    dimension: usize,
    source_digest: String,
    entries: Vec<IndexEntry>,
    examples: Vec<RetrievalExample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedExample {
    pub example: RetrievalExample,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

impl RetrievalIndex {
    pub fn provider_name(&self) -> &str {
        &self.provider_name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Scores every entry against `query` and keeps the `k` best, ties going
    /// to the earlier corpus position.
    pub fn top_k(
        &self,
        query: &str,
        k: usize,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Vec<RankedExample>, RetrieveError> {
        if provider.name() != self.provider_name {
            return Err(RetrieveError::ProviderMismatch {
                index: self.provider_name.clone(),
                query: provider.name().to_string(),
            });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let query = embed_text(provider, query).map_err(RetrieveError::QueryEmbedding)?;
        let mut scored = Vec::with_capacity(self.entries.len());
        for (pos, entry) in self.entries.iter().enumerate() {
            let score = cosine(&query, &entry.vector).map_err(RetrieveError::QueryEmbedding)?;
            scored.push((pos, score));
        }
        // Stable sort keeps corpus order among equal scores.
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(scored
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(i, (pos, score))| RankedExample {
                example: self.examples[pos].clone(),
                score,
                rank: i + 1,
            })
            .collect())
    }

    pub fn to_file_string(&self) -> String {
        let header = IndexHeader {
            format_version: INDEX_FORMAT_VERSION,
            provider_name: self.provider_name.clone(),
            dimension: self.dimension,
            source_digest: self.source_digest.clone(),
            entry_count: self.entries.len(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for entry in &self.entries {
            let _ = writeln!(
                out,
                "{}",
                serde_json::to_string(entry).expect("entry serializes")
            );
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrieveError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_file_string())
            .and_then(|_| std::fs::rename(&tmp, path))
            .map_err(|e| RetrieveError::IoFailure(format!("{}: {e}", path.display())))
    }

    /// Parses a saved index and attaches it to `set`, which must be the exact
    /// corpus the index was built from.
    pub fn from_file_str(text: &str, set: &ExampleSet) -> Result<Self, RetrieveError> {
        let corrupt = |msg: String| RetrieveError::CorruptIndex(msg);
        let mut lines = text.lines();
        let header: IndexHeader = serde_json::from_str(
            lines.next().ok_or_else(|| corrupt("missing header".into()))?,
        )
        .map_err(|e| corrupt(format!("header: {e}")))?;
        if header.format_version != INDEX_FORMAT_VERSION {
            return Err(corrupt(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let mut entries = Vec::with_capacity(header.entry_count);
        for (i, line) in lines.enumerate() {
            let entry: IndexEntry =
                serde_json::from_str(line).map_err(|e| corrupt(format!("entry {i}: {e}")))?;
            if entry.vector.dimension() != header.dimension {
                return Err(corrupt(format!(
                    "entry {:?} has dimension {}, header says {}",
                    entry.id,
                    entry.vector.dimension(),
                    header.dimension
                )));
            }
            entries.push(entry);
        }
        if entries.len() != header.entry_count {
            return Err(corrupt(format!(
                "expected {} entries, found {}",
                header.entry_count,
                entries.len()
            )));
        }
        if header.source_digest != set.source_digest() {
            return Err(RetrieveError::DigestMismatch {
                index: header.source_digest,
                set: set.source_digest().to_string(),
            });
        }
        let ids_match = entries.len() == set.len()
            && entries
                .iter()
                .zip(set.examples())
                .all(|(entry, example)| entry.id == example.id);
        if !ids_match {
            return Err(corrupt("entry ids do not match the example set".into()));
        }
        Ok(Self {
            provider_name: header.provider_name,
            dimension: header.dimension,
            source_digest: header.source_digest,
            entries,
            examples: set.examples().to_vec(),
        })
    }

    pub fn load(path: impl AsRef<Path>, set: &ExampleSet) -> Result<Self, RetrieveError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| RetrieveError::IoFailure(format!("{}: {e}", path.display())))?;
        Self::from_file_str(&text, set)
    }
}

pub fn build_index(
    set: &ExampleSet,
    provider: &dyn EmbeddingProvider,
) -> Result<RetrievalIndex, RetrieveError> {
    if set.is_empty() {
        return Err(RetrieveError::EmptySet);
    }
    let entries = set
        .examples()
        .iter()
        .map(|example| {
            embed_text(provider, &example.description)
                .map(|vector| IndexEntry {
                    id: example.id.clone(),
                    vector,
                })
                .map_err(|error| RetrieveError::ExampleEmbedding {
                    id: example.id.clone(),
                    error,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RetrievalIndex {
        provider_name: provider.name().to_string(),
        dimension: provider.dimension(),
        source_digest: set.source_digest().to_string(),
        entries,
        examples: set.examples().to_vec(),
    })
}

pub fn save_index(index: &RetrievalIndex, path: impl AsRef<Path>) -> Result<(), RetrieveError> {
    index.save(path)
}

pub fn load_index(path: impl AsRef<Path>, set: &ExampleSet) -> Result<RetrievalIndex, RetrieveError> {
    RetrievalIndex::load(path, set)
}
