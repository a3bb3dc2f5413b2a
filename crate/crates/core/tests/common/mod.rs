#![allow(dead_code)]

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;

use cat_core::corpus::{load_examples, ExampleSet};
use cat_core::decompose::{ActionKind, ActionStep, Direction};
use cat_core::device::{load_app_model, SimulatedDevice};
use cat_core::hierarchy::HierarchyNode;
use cat_core::llm::{FixtureClient, PriceModel};
use cat_core::mapper::MapperConfig;
use cat_core::runner::{run_batch, BatchReport, RunConfig, RunDeps, TaskSpec};
use cat_core::{build_index, HashedTrigramProvider, PromptTemplate, RetrievalExample, RetrievalIndex};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Bundled simulated app, corpus and recorded model answers.
pub struct FixtureBed {
    pub device: SimulatedDevice,
    pub index: RetrievalIndex,
    pub tasks: Vec<TaskSpec>,
    pub llm: FixtureClient,
    pub provider: HashedTrigramProvider,
    pub template: PromptTemplate,
}

impl FixtureBed {
    pub fn suite() -> Self {
        let tasks = load_examples(fixtures().join("suite/tasks.jsonl")).unwrap();
        Self::load("suite", tasks.examples().iter().map(TaskSpec::from).collect())
    }

    pub fn demo() -> Self {
        Self::load(
            "demo",
            vec![TaskSpec {
                id: "demo".into(),
                description: "change username to TEST".into(),
                expect_screen: Some("name_saved".into()),
            }],
        )
    }

    fn load(dir: &str, tasks: Vec<TaskSpec>) -> Self {
        let root = fixtures().join(dir);
        let provider = HashedTrigramProvider::new();
        let corpus = load_examples(root.join("corpus.jsonl")).unwrap();
        Self {
            device: SimulatedDevice::new(load_app_model(root.join("app.json")).unwrap()),
            index: build_index(&corpus, &provider).unwrap(),
            tasks,
            llm: FixtureClient::replay(fixtures().join("llm"), PriceModel::default()).unwrap(),
            provider,
            template: PromptTemplate::decomposition(),
        }
    }

    pub fn deps(&self) -> RunDeps<'_> {
        RunDeps {
            index: Some(&self.index),
            provider: &self.provider,
            llm: &self.llm,
            device: &self.device,
            template: &self.template,
        }
    }

    pub fn run(&self, shots_k: usize, optimizer_enabled: bool) -> BatchReport {
        run_batch(&self.tasks, &mode(shots_k, optimizer_enabled), self.deps()).unwrap()
    }
}

pub fn mode(shots_k: usize, optimizer_enabled: bool) -> RunConfig {
    RunConfig {
        shots_k,
        mapper: MapperConfig {
            optimizer_enabled,
            ..MapperConfig::default()
        },
        ..RunConfig::default()
    }
}

const VERBS: &[&str] = &["open", "share", "delete", "send", "change", "turn off", "enable", "view", "search", "add"];
const OBJECTS: &[&str] = &[
    "settings", "a picture", "all events", "my location", "the username", "dark mode", "moments",
    "favorites", "blocked list", "a contact", "the password", "chat history", "a sticker",
];
const TAILS: &[&str] = &["", " with Pony", " to Alice", " in the group", " for today", " now", " again"];

/// Short task-like phrase; the small vocabulary makes exact duplicates, and
/// therefore score ties, common.
pub fn synthetic_description(rng: &mut impl Rng) -> String {
    format!(
        "{} {}{}",
        VERBS.choose(rng).unwrap(),
        OBJECTS.choose(rng).unwrap(),
        TAILS.choose(rng).unwrap()
    )
}

pub fn synthetic_example(rng: &mut impl Rng, id: usize, activity: String) -> RetrievalExample {
    RetrievalExample {
        id: format!("s{id}"),
        description: synthetic_description(rng),
        activity,
        steps: vec![ActionStep::tap(1, "me")],
        expect_screen: None,
    }
}

/// Corpus of `n` examples spread over activities of random size.
pub fn synthetic_corpus(rng: &mut impl Rng, n: usize, max_activity: usize) -> ExampleSet {
    let mut examples = Vec::with_capacity(n);
    let mut activity = 0;
    while examples.len() < n {
        let size = rng.gen_range(1..=max_activity).min(n - examples.len());
        for _ in 0..size {
            let id = examples.len();
            examples.push(synthetic_example(rng, id, format!("Activity{activity}")));
        }
        activity += 1;
    }
    // Interleave so activities are not contiguous in file order.
    examples.shuffle(rng);
    ExampleSet::from_examples(examples).unwrap()
}

const WORDS: &[&str] = &["OK", "Cancel", "Settings", "Me", "Send", "Back", "Album", "Pony", "Search", "Save"];
const CONTAINERS: &[&str] = &["android.widget.LinearLayout", "android.widget.FrameLayout", "android.view.ViewGroup"];
const WIDGETS: &[&str] = &["android.widget.TextView", "android.widget.ImageView", "android.widget.Button", "android.widget.EditText"];

/// Random UIAutomator-shaped tree of depth at most `max_depth`.
pub fn random_tree(rng: &mut impl Rng, max_depth: usize, max_fanout: usize) -> HierarchyNode {
    let fanout = if max_depth <= 1 { 0 } else { rng.gen_range(0..=max_fanout) };
    let class = if fanout == 0 {
        *WIDGETS.choose(rng).unwrap()
    } else {
        *CONTAINERS.choose(rng).unwrap()
    };
    let mut node = HierarchyNode::new(class).with_attr("class", class);
    if rng.gen_bool(0.25) {
        node = node.with_attr("clickable", "true");
    }
    if rng.gen_bool(0.5) {
        node = node.with_attr("text", *WORDS.choose(rng).unwrap());
    }
    if rng.gen_bool(0.2) {
        node = node.with_attr("content-desc", *WORDS.choose(rng).unwrap());
    }
    for _ in 0..fanout {
        node.children.push(random_tree(rng, max_depth - 1, max_fanout));
    }
    node
}

pub fn random_plan(rng: &mut impl Rng) -> Vec<ActionStep> {
    let len = rng.gen_range(1..=12);
    (1..=len)
        .map(|index| {
            let kind = *ActionKind::ALL.choose(rng).unwrap();
            let target = format!("{} {}", WORDS.choose(rng).unwrap(), rng.gen_range(0..100)).to_lowercase();
            let mut step = match kind {
                ActionKind::Back => ActionStep::back(index),
                ActionKind::Input => ActionStep::input(index, &target, &format!("value {}", rng.gen::<u16>())),
                ActionKind::LongTap => ActionStep::long_tap(index, &target),
                _ => ActionStep::tap(index, &target),
            };
            step.kind = kind;
            if matches!(kind, ActionKind::Swipe | ActionKind::Scroll) && rng.gen_bool(0.5) {
                step.direction = Some(*Direction::ALL.choose(rng).unwrap());
            }
            step
        })
        .collect()
}
