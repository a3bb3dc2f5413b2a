//! Example store: prior task descriptions with their ground-truth steps.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decompose::{ActionStep, StepRecord};

pub const UNLABELED_ACTIVITY: &str = "unlabeled";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("cannot read {path}: {reason}")]
    FileUnreadable { path: String, reason: String },
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate example id {0:?}")]
    DuplicateId(String),
    #[error("need at least 2 distinct activities to split, found {0}")]
    TooFewActivities(usize),
    #[error("test fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalExample {
    pub id: String,
    pub description: String,
    pub activity: String,
    pub steps: Vec<ActionStep>,
    /// Screen id a run of this task must end on to count as completed.
    pub expect_screen: Option<String>,
}

/// Wire form of one example-store line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleRecord {
    id: String,
    description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activity: Option<String>,
    steps: Vec<StepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expect_screen: Option<String>,
}

impl ExampleRecord {
    fn into_example(self) -> Result<RetrievalExample, String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.description.trim().is_empty() {
            return Err("empty description".into());
        }
        if self.steps.is_empty() {
            return Err("no steps".into());
        }
        let steps = self
            .steps
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.into_step(i + 1).map_err(|e| format!("step {}: {e}", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        let activity = self
            .activity
            .filter(|a| !a.trim().is_empty())
            .unwrap_or_else(|| UNLABELED_ACTIVITY.to_string());
        Ok(RetrievalExample {
            id: self.id,
            description: self.description,
            activity,
            steps,
            expect_screen: self.expect_screen,
        })
    }

    fn from_example(example: &RetrievalExample) -> Self {
        Self {
            id: example.id.clone(),
            description: example.description.clone(),
            activity: Some(example.activity.clone()),
            steps: example.steps.iter().map(StepRecord::from_step).collect(),
            expect_screen: example.expect_screen.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleSet {
    examples: Vec<RetrievalExample>,
    source_digest: String,
}

impl ExampleSet {
    /// Builds a set from in-memory examples; the digest covers their
    /// canonical line-delimited JSON form.
    pub fn from_examples(examples: Vec<RetrievalExample>) -> Result<Self, CorpusError> {
        check_unique(&examples)?;
        let mut set = Self {
            examples,
            source_digest: String::new(),
        };
        set.source_digest = sha256_hex(set.to_jsonl().as_bytes());
        Ok(set)
    }

    pub fn examples(&self) -> &[RetrievalExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn get(&self, id: &str) -> Option<&RetrievalExample> {
        self.examples.iter().find(|e| e.id == id)
    }

    pub fn activities(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.examples
            .iter()
            .map(|e| e.activity.as_str())
            .filter(|a| seen.insert(*a))
            .collect()
    }

    /// Canonical line-delimited JSON, one example per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for example in &self.examples {
            out.push_str(
                &serde_json::to_string(&ExampleRecord::from_example(example))
                    .expect("record serializes"),
            );
            out.push('\n');
        }
        out
    }
}

fn check_unique(examples: &[RetrievalExample]) -> Result<(), CorpusError> {
    let mut ids = HashSet::new();
    for example in examples {
        if !ids.insert(example.id.as_str()) {
            return Err(CorpusError::DuplicateId(example.id.clone()));
        }
    }
    Ok(())
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses example-store text, keeping valid records and reporting every
/// invalid line. Blank lines are ignored.
pub fn parse_examples_lenient(text: &str) -> (Vec<RetrievalExample>, Vec<CorpusError>) {
    let mut examples = Vec::new();
    let mut issues = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<ExampleRecord>(line)
            .map_err(|e| e.to_string())
            .and_then(ExampleRecord::into_example);
        match parsed {
            Ok(example) => examples.push(example),
            Err(reason) => issues.push(CorpusError::MalformedRecord {
                line: idx + 1,
                reason,
            }),
        }
    }
    (examples, issues)
}

/// Loads a line-delimited JSON example store. Fails on the first invalid
/// record; use [`parse_examples_lenient`] to collect all of them.
pub fn load_examples(path: impl AsRef<Path>) -> Result<ExampleSet, CorpusError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| CorpusError::FileUnreadable {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| CorpusError::FileUnreadable {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let (examples, issues) = parse_examples_lenient(&text);
    if let Some(first) = issues.into_iter().next() {
        return Err(first);
    }
    check_unique(&examples)?;
    Ok(ExampleSet {
        examples,
        source_digest: sha256_hex(&bytes),
    })
}

/// Splits by whole activities: activities are shuffled with `seed` and moved
/// to the test side until it holds at least `test_fraction` of all examples.
/// Both outputs keep the input order.
pub fn split_by_activity(
    set: &ExampleSet,
    test_fraction: f64,
    seed: u64,
) -> Result<(ExampleSet, ExampleSet), CorpusError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(test_fraction));
    }
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for example in &set.examples {
        *sizes.entry(example.activity.as_str()).or_default() += 1;
    }
    if sizes.len() < 2 {
        return Err(CorpusError::TooFewActivities(sizes.len()));
    }
    let mut activities = set.activities();
    activities.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let target = test_fraction * set.len() as f64;
    let mut test_count = 0usize;
    let mut test_activities = HashSet::new();
    for activity in activities {
        if (test_count as f64) >= target {
            break;
        }
        test_count += sizes[activity];
        test_activities.insert(activity);
    }

    let (test, retrieval): (Vec<_>, Vec<_>) = set
        .examples
        .iter()
        .cloned()
        .partition(|e| test_activities.contains(e.activity.as_str()));
    Ok((
        ExampleSet::from_examples(retrieval)?,
        ExampleSet::from_examples(test)?,
    ))
}
