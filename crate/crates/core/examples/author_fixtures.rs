//! Regenerates the recorded LLM fixtures under `fixtures/llm`.
//!
//! A scripted model stands in for the remote LLM: decomposition answers come
//! from `fixtures/script.toml`, keyed by task description and by how many
//! examples the prompt carried (0, 1, or more); optimizer answers are keyed
//! by target phrase. Every configuration the tests exercise is run once in
//! record mode, so the fixture set covers exactly the prompts the pipeline
//! produces. Rerun after changing a template, the embedding, or a corpus:
//!
//! ```text
//! cargo run -p cat-core --example author_fixtures
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::Deserialize;

use cat_core::corpus::load_examples;
use cat_core::device::{load_app_model, SimulatedDevice};
use cat_core::llm::FixtureClient;
use cat_core::llm::{estimate_tokens, LlmClient, LlmError, LlmExchange, PriceModel, PromptMessages};
use cat_core::mapper::MapperConfig;
use cat_core::runner::{run_batch, RunConfig, RunDeps, TaskSpec};
use cat_core::{build_index, HashedTrigramProvider, PromptTemplate};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Script {
    optimizer: BTreeMap<String, String>,
    task: Vec<ScriptedTask>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptedTask {
    description: String,
    one_shot: String,
    zero_shot: Option<String>,
    n_shot: Option<String>,
}

struct ScriptedLlm {
    script: Script,
    task_re: Regex,
    target_re: Regex,
}

impl ScriptedLlm {
    fn new(script: Script) -> Self {
        Self {
            script,
            task_re: Regex::new(r#"Task description -> "([^"]*)"\s*Actions ->\s*$"#).unwrap(),
            target_re: Regex::new(r#"Target element -> "([^"]*)""#).unwrap(),
        }
    }

    fn answer(&self, prompt: &str) -> Result<(String, u64), LlmError> {
        if let Some(target) = self.target_re.captures(prompt) {
            let target = &target[1];
            let text = match self.script.optimizer.get(target) {
                Some(label) => format!("The element that matches \"{target}\" is {label}."),
                None => format!("[{target}]"),
            };
            return Ok((text, 900));
        }
        let task = self
            .task_re
            .captures(prompt)
            .map(|c| c[1].to_string())
            .ok_or_else(|| provider_error("prompt has no task description"))?;
        let entry = self
            .script
            .task
            .iter()
            .find(|t| t.description == task)
            .ok_or_else(|| provider_error(&format!("no script for task {task:?}")))?;
        let plan = match prompt.matches("Here is an example:").count() {
            0 => entry.zero_shot.as_ref().unwrap_or(&entry.one_shot),
            1 => &entry.one_shot,
            _ => entry.n_shot.as_ref().unwrap_or(&entry.one_shot),
        };
        Ok((plan.clone(), 2400))
    }
}

fn provider_error(body: &str) -> LlmError {
    LlmError::ProviderError {
        status: 0,
        body: body.to_string(),
    }
}

impl LlmClient for ScriptedLlm {
    fn model(&self) -> &str {
        "scripted-author"
    }

    fn complete(&self, prompt: &PromptMessages) -> Result<LlmExchange, LlmError> {
        let (completion_text, latency_ms) = self.answer(&prompt.text())?;
        let prompt_tokens = prompt.estimated_tokens();
        let completion_tokens = estimate_tokens(&completion_text);
        Ok(LlmExchange {
            model: self.model().to_string(),
            prompt: prompt.clone(),
            prompt_tokens,
            completion_tokens,
            latency_ms,
            price: PriceModel::default().price(prompt_tokens, completion_tokens),
            completion_text,
        })
    }
}

struct Suite {
    name: &'static str,
    app: PathBuf,
    corpus: PathBuf,
    tasks: Vec<TaskSpec>,
    modes: &'static [(&'static str, usize, bool)],
}

const ALL_MODES: &[(&str, usize, bool)] = &[
    ("full", 1, true),
    ("no-optimizer", 1, false),
    ("0-shot", 0, true),
    ("N-shot", 5, true),
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let llm_dir = root.join("llm");
    fs::create_dir_all(&llm_dir)?;
    for entry in fs::read_dir(&llm_dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            fs::remove_file(path)?;
        }
    }

    let script: Script = toml::from_str(&fs::read_to_string(root.join("script.toml"))?)?;
    let client = FixtureClient::record(&llm_dir, Box::new(ScriptedLlm::new(script)), PriceModel::default())?;

    let suite_tasks = load_examples(root.join("suite/tasks.jsonl"))?;
    let suites = [
        Suite {
            name: "demo",
            app: root.join("demo/app.json"),
            corpus: root.join("demo/corpus.jsonl"),
            tasks: vec![TaskSpec {
                id: "demo".into(),
                description: "change username to TEST".into(),
                expect_screen: Some("name_saved".into()),
            }],
            modes: &ALL_MODES[..3],
        },
        Suite {
            name: "suite",
            app: root.join("suite/app.json"),
            corpus: root.join("suite/corpus.jsonl"),
            tasks: suite_tasks.examples().iter().map(TaskSpec::from).collect(),
            modes: ALL_MODES,
        },
    ];

    let provider = HashedTrigramProvider::new();
    let template = PromptTemplate::decomposition();
    for suite in &suites {
        let device = SimulatedDevice::new(load_app_model(&suite.app)?);
        let index = build_index(&load_examples(&suite.corpus)?, &provider)?;
        for &(mode, shots_k, optimizer_enabled) in suite.modes {
            let config = RunConfig {
                shots_k,
                mapper: MapperConfig {
                    optimizer_enabled,
                    ..MapperConfig::default()
                },
                ..RunConfig::default()
            };
            let deps = RunDeps {
                index: Some(&index),
                provider: &provider,
                llm: &client,
                device: &device,
                template: &template,
            };
            let report = run_batch(&suite.tasks, &config, deps)?;
            println!(
                "{} {mode}: {}/{} completed",
                suite.name, report.completed, report.n_tasks
            );
            for ledger in &report.ledgers {
                let routes: Vec<String> = ledger
                    .mappings
                    .iter()
                    .map(|m| format!("{}:{:.2}{}", m.step, m.best_score, if m.method == cat_core::mapper::MappingMethod::LlmOptimizer { "*" } else { "" }))
                    .collect();
                println!("  {:<8} {:<28} {}", ledger.task_id, ledger.status.to_string(), routes.join(" "));
                if let Some(err) = &ledger.error {
                    println!("           {}", err.message);
                }
            }
        }
    }
    Ok(())
}
