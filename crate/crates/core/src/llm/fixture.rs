//! Record/replay LLM client backed by a directory of `<digest>.json` files.
//!
//! Recordings are keyed by [`PromptMessages::digest`], so editing a prompt
//! template or any input that reaches the prompt turns old recordings into
//! loud `FixtureMiss` errors instead of silently replaying stale answers.

use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    estimate_tokens, price, ChatMessage, LlmClient, LlmError, LlmExchange, PriceModel,
    PromptMessages,
};

const LOCK_FILE: &str = ".record.lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// On-disk form of one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub prompt_digest: String,
    pub completion_text: String,
    /// Absent for hand-authored fixtures; the estimator fills in on replay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<FixtureUsage>,
    #[serde(default)]
    pub latency_ms: u64,
    /// Kept for human inspection only; never consulted on replay.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prompt: Vec<ChatMessage>,
}

pub enum FixtureMode {
    /// Replay only; unseen prompts fail with `FixtureMiss`.
    Strict,
    /// Replay when recorded, otherwise call the inner client and persist.
    Record(Box<dyn LlmClient>),
}

pub struct FixtureClient {
    dir: PathBuf,
    model: String,
    price_model: PriceModel,
    mode: FixtureMode,
    write_guard: Mutex<()>,
    lock: Option<PathBuf>,
}

impl FixtureClient {
    pub fn replay(dir: impl Into<PathBuf>, price_model: PriceModel) -> Result<Self, LlmError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(LlmError::FixtureStore(format!(
                "fixture directory {} does not exist",
                dir.display()
            )));
        }
        Ok(Self {
            model: format!("fixture:{}", dir.display()),
            dir,
            price_model,
            mode: FixtureMode::Strict,
            write_guard: Mutex::new(()),
            lock: None,
        })
    }

    /// Takes an exclusive lock file in `dir` for the client's lifetime.
    pub fn record(
        dir: impl Into<PathBuf>,
        inner: Box<dyn LlmClient>,
        price_model: PriceModel,
    ) -> Result<Self, LlmError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| LlmError::FixtureStore(e.to_string()))?;
        let lock = dir.join(LOCK_FILE);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| {
                LlmError::FixtureStore(format!("cannot lock {}: {e}", lock.display()))
            })?;
        Ok(Self {
            model: inner.model().to_string(),
            dir,
            price_model,
            mode: FixtureMode::Record(inner),
            write_guard: Mutex::new(()),
            lock: Some(lock),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    fn load(&self, digest: &str) -> Result<Option<FixtureRecord>, LlmError> {
        let path = self.path_for(digest);
        let raw = match fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(LlmError::FixtureStore(format!("{}: {e}", path.display()))),
        };
        let record: FixtureRecord = serde_json::from_str(&raw)
            .map_err(|e| LlmError::FixtureStore(format!("{}: {e}", path.display())))?;
        if record.prompt_digest != digest {
            return Err(LlmError::FixtureStore(format!(
                "{} records digest {}",
                path.display(),
                record.prompt_digest
            )));
        }
        Ok(Some(record))
    }

    fn exchange_from(&self, prompt: &PromptMessages, record: FixtureRecord) -> LlmExchange {
        let usage = record.usage.unwrap_or(FixtureUsage {
            prompt_tokens: prompt.estimated_tokens(),
            completion_tokens: estimate_tokens(&record.completion_text),
        });
        LlmExchange {
            model: self.model.clone(),
            prompt: prompt.clone(),
            completion_text: record.completion_text,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            latency_ms: record.latency_ms,
            price: price(usage.prompt_tokens, usage.completion_tokens, &self.price_model),
        }
    }

    fn persist(&self, record: &FixtureRecord) -> Result<(), LlmError> {
        let _guard = self.write_guard.lock().expect("fixture write lock poisoned");
        let path = self.path_for(&record.prompt_digest);
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_string_pretty(record).expect("fixture serializes");
        let mut file = File::create(&tmp).map_err(|e| LlmError::FixtureStore(e.to_string()))?;
        file.write_all(body.as_bytes())
            .and_then(|_| file.write_all(b"\n"))
            .map_err(|e| LlmError::FixtureStore(e.to_string()))?;
        fs::rename(&tmp, &path).map_err(|e| LlmError::FixtureStore(e.to_string()))
    }
}

impl LlmClient for FixtureClient {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &PromptMessages) -> Result<LlmExchange, LlmError> {
        let digest = prompt.digest();
        if let Some(record) = self.load(&digest)? {
            return Ok(self.exchange_from(prompt, record));
        }
        match &self.mode {
            FixtureMode::Strict => Err(LlmError::FixtureMiss(digest)),
            FixtureMode::Record(inner) => {
                let live = inner.complete(prompt)?;
                let record = FixtureRecord {
                    prompt_digest: digest,
                    completion_text: live.completion_text,
                    usage: Some(FixtureUsage {
                        prompt_tokens: live.prompt_tokens,
                        completion_tokens: live.completion_tokens,
                    }),
                    latency_ms: live.latency_ms,
                    prompt: prompt.messages().to_vec(),
                };
                self.persist(&record)?;
                Ok(self.exchange_from(prompt, record))
            }
        }
    }
}

impl Drop for FixtureClient {
    fn drop(&mut self) {
        if let Some(lock) = &self.lock {
            let _ = fs::remove_file(lock);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Canned {
        calls: Arc<AtomicUsize>,
    }

    impl LlmClient for Canned {
        fn model(&self) -> &str {
            "canned"
        }

        fn complete(&self, prompt: &PromptMessages) -> Result<LlmExchange, LlmError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(LlmExchange {
                model: "canned".into(),
                prompt: prompt.clone(),
                completion_text: "1. [tap] [me]".into(),
                prompt_tokens: 120,
                completion_tokens: 7,
                latency_ms: 250,
                price: price(120, 7, &PriceModel::default()),
            })
        }
    }

    #[test]
    fn strict_replay_misses_unseen_prompt() {
        let dir = tempfile::tempdir().unwrap();
        let client = FixtureClient::replay(dir.path(), PriceModel::default()).unwrap();
        let prompt = PromptMessages::user("never recorded");
        assert_eq!(
            client.complete(&prompt),
            Err(LlmError::FixtureMiss(prompt.digest()))
        );
    }

    #[test]
    fn record_once_then_replay_identically() {
        let dir = tempfile::tempdir().unwrap();
        let calls = Arc::new(AtomicUsize::new(0));
        let prompt = PromptMessages::user("open settings");
        let recorded = {
            let recorder = FixtureClient::record(
                dir.path(),
                Box::new(Canned { calls: calls.clone() }),
                PriceModel::default(),
            )
            .unwrap();
            let first = recorder.complete(&prompt).unwrap();
            let again = recorder.complete(&prompt).unwrap();
            assert_eq!(first, again);
            first
        };
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert!(!dir.path().join(LOCK_FILE).exists());

        let replay = FixtureClient::replay(dir.path(), PriceModel::default()).unwrap();
        let a = replay.complete(&prompt).unwrap();
        let b = replay.complete(&prompt).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.completion_text, recorded.completion_text);
        assert_eq!((a.prompt_tokens, a.completion_tokens), (120, 7));
        assert_eq!(a.latency_ms, 250);
        assert_eq!(a.price, recorded.price);
    }

    #[test]
    fn second_recorder_is_locked_out() {
        let dir = tempfile::tempdir().unwrap();
        let calls = Arc::new(AtomicUsize::new(0));
        let _first = FixtureClient::record(
            dir.path(),
            Box::new(Canned { calls: calls.clone() }),
            PriceModel::default(),
        )
        .unwrap();
        let second = FixtureClient::record(
            dir.path(),
            Box::new(Canned { calls }),
            PriceModel::default(),
        );
        assert!(matches!(second, Err(LlmError::FixtureStore(_))));
    }

    #[test]
    fn hand_authored_fixture_uses_estimator() {
        let dir = tempfile::tempdir().unwrap();
        let prompt = PromptMessages::user("abcdefgh");
        let record = FixtureRecord {
            prompt_digest: prompt.digest(),
            completion_text: "[ok]".into(),
            usage: None,
            latency_ms: 0,
            prompt: vec![],
        };
        fs::write(
            dir.path().join(format!("{}.json", prompt.digest())),
            serde_json::to_string(&record).unwrap(),
        )
        .unwrap();
        let client = FixtureClient::replay(dir.path(), PriceModel::default()).unwrap();
        let ex = client.complete(&prompt).unwrap();
        assert_eq!((ex.prompt_tokens, ex.completion_tokens), (2, 1));
    }

    #[test]
    fn replay_is_repriced_with_current_model() {
        let dir = tempfile::tempdir().unwrap();
        let prompt = PromptMessages::user("x");
        let record = FixtureRecord {
            prompt_digest: prompt.digest(),
            completion_text: "y".into(),
            usage: Some(FixtureUsage { prompt_tokens: 2_000, completion_tokens: 0 }),
            latency_ms: 0,
            prompt: vec![],
        };
        fs::write(
            dir.path().join(format!("{}.json", prompt.digest())),
            serde_json::to_string(&record).unwrap(),
        )
        .unwrap();
        let free = FixtureClient::replay(dir.path(), PriceModel::zero()).unwrap();
        assert_eq!(free.complete(&prompt).unwrap().price, super::super::Money::ZERO);
        let paid = FixtureClient::replay(dir.path(), PriceModel::default()).unwrap();
        assert_eq!(paid.complete(&prompt).unwrap().price.to_string(), "$0.006000");
    }
}
