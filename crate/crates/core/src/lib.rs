//! Cost-aware UI automation: retrieval-augmented task decomposition followed
//! by embedding-based element mapping with an LLM fallback.
//!
//! The pipeline has two phases. [`decompose`] retrieves the most similar
//! prior tasks from a [`retrieve::RetrievalIndex`], places them in a few-shot
//! prompt, and parses the model's numbered action list. [`runner`] then
//! executes each step on a [`device::DeviceSession`], mapping the step's
//! target phrase to an on-screen element through [`mapper`]. Every model
//! call is recorded with its token usage and exact-decimal price.

pub mod corpus;
pub mod decompose;
pub mod device;
pub mod embed;
pub mod hierarchy;
pub mod llm;
pub mod mapper;
pub mod retrieve;
pub mod runner;

pub use corpus::{load_examples, split_by_activity, ExampleSet, RetrievalExample};
pub use decompose::{parse_actions, ActionKind, ActionStep, PromptTemplate};
pub use embed::{cosine, embed_text, EmbeddingProvider, EmbeddingVector, HashedTrigramProvider};
pub use hierarchy::{parse_hierarchy, simplify, UIElement, UIScreen};
pub use llm::{LlmClient, LlmExchange, Money, PriceModel, PromptMessages};
pub use mapper::{resolve, MapperConfig};
pub use retrieve::{build_index, RetrievalIndex};
pub use runner::{run_batch, run_task, BatchReport, RunConfig, RunDeps, RunLedger, RunStatus, TaskSpec};
