//! Task orchestration: decompose once, then capture → map → perform per step.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::RetrievalExample;
use crate::decompose::{
    decompose, ActionKind, ActionStep, DecomposeError, PromptTemplate, ShotRetriever,
    DEFAULT_SHOTS,
};
use crate::embed::EmbeddingProvider;
use crate::llm::{LlmClient, LlmExchange, Money};
use crate::mapper::{resolve, MapperConfig, MappingMethod, ResolveError};
use crate::device::DeviceFactory;
use crate::retrieve::{RetrievalIndex, RetrieveError};

pub const DEFAULT_MAX_STEPS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub shots_k: usize,
    pub mapper: MapperConfig,
    pub max_steps: usize,
    pub parallelism: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            shots_k: DEFAULT_SHOTS,
            mapper: MapperConfig::default(),
            max_steps: DEFAULT_MAX_STEPS,
            parallelism: 1,
        }
    }
}

/// Everything a run needs besides its configuration.
#[derive(Clone, Copy)]
pub struct RunDeps<'a> {
    pub index: Option<&'a RetrievalIndex>,
    pub provider: &'a dyn EmbeddingProvider,
    pub llm: &'a dyn LlmClient,
    pub device: &'a dyn DeviceFactory,
    pub template: &'a PromptTemplate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_screen: Option<String>,
}

impl From<&RetrievalExample> for TaskSpec {
    fn from(example: &RetrievalExample) -> Self {
        Self {
            id: example.id.clone(),
            description: example.description.clone(),
            expect_screen: example.expect_screen.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    FailedDecomposition,
    FailedMapping { step: usize },
    FailedTransition { step: usize },
    /// Every step ran but the final screen differs from `expect_screen`.
    FailedAssertion { expected: String, actual: String },
    AbortedBudget,
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::FailedDecomposition => "failed_decomposition",
            RunStatus::FailedMapping { .. } => "failed_mapping",
            RunStatus::FailedTransition { .. } => "failed_transition",
            RunStatus::FailedAssertion { .. } => "failed_assertion",
            RunStatus::AbortedBudget => "aborted_budget",
        }
    }

    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunStatus::FailedMapping { step } | RunStatus::FailedTransition { step } => {
                write!(f, "{} (step {step})", self.label())
            }
            RunStatus::FailedAssertion { expected, actual } => {
                write!(f, "{} (expected {expected}, ended on {actual})", self.label())
            }
            _ => f.write_str(self.label()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum ExchangePhase {
    Decomposition,
    Mapping { step: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedExchange {
    #[serde(flatten)]
    pub phase: ExchangePhase,
    pub exchange: LlmExchange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMapping {
    pub step: usize,
    pub target: String,
    pub element_id: usize,
    pub method: MappingMethod,
    pub best_score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunError {
    pub message: String,
    /// Provider, network or device trouble rather than a wrong plan or map.
    pub infrastructure: bool,
}

/// Per-run record. `wall_time_ms` spans decomposition through the last action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub task_id: String,
    pub task: String,
    pub status: RunStatus,
    pub plan: Vec<ActionStep>,
    pub steps_executed: usize,
    pub exchanges: Vec<TaggedExchange>,
    pub total_price: Money,
    pub wall_time_ms: u64,
    pub screen_trace: Vec<String>,
    pub mappings: Vec<StepMapping>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RunError>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub discarded: Vec<String>,
}

impl RunLedger {
    fn new(task: &TaskSpec) -> Self {
        Self {
            task_id: task.id.clone(),
            task: task.description.clone(),
            status: RunStatus::Completed,
            plan: Vec::new(),
            steps_executed: 0,
            exchanges: Vec::new(),
            total_price: Money::ZERO,
            wall_time_ms: 0,
            screen_trace: Vec::new(),
            mappings: Vec::new(),
            error: None,
            discarded: Vec::new(),
        }
    }

    fn push_exchange(&mut self, phase: ExchangePhase, exchange: LlmExchange) {
        self.exchanges.push(TaggedExchange { phase, exchange });
    }

    fn fail(&mut self, status: RunStatus, message: String, infrastructure: bool) {
        self.status = status;
        self.error = Some(RunError {
            message,
            infrastructure,
        });
    }

    pub fn llm_calls(&self) -> usize {
        self.exchanges.len()
    }

    pub fn optimizer_calls(&self) -> usize {
        self.exchanges
            .iter()
            .filter(|e| matches!(e.phase, ExchangePhase::Mapping { .. }))
            .count()
    }

    /// Prompt plus completion tokens spent in the mapping stage.
    pub fn mapping_tokens(&self) -> u64 {
        self.exchanges
            .iter()
            .filter(|e| matches!(e.phase, ExchangePhase::Mapping { .. }))
            .map(|e| e.exchange.prompt_tokens + e.exchange.completion_tokens)
            .sum()
    }

    pub fn final_screen(&self) -> Option<&str> {
        self.screen_trace.last().map(String::as_str)
    }
}

fn decompose_is_infrastructure(err: &DecomposeError) -> bool {
    match err {
        DecomposeError::Llm(_) | DecomposeError::NoIndex => true,
        DecomposeError::Retrieval(r) => !matches!(r, RetrieveError::QueryEmbedding(_)),
        DecomposeError::EmptyTask | DecomposeError::Parse { .. } => false,
    }
}

/// Runs one task in a fresh device session. Failures are reported through
/// the ledger's status, never as an `Err`.
pub fn run_task(task: &TaskSpec, config: &RunConfig, deps: RunDeps<'_>) -> RunLedger {
    let started = Instant::now();
    let mut ledger = RunLedger::new(task);
    execute(task, config, deps, &mut ledger);
    ledger.total_price = ledger.exchanges.iter().map(|e| e.exchange.price).sum();
    ledger.wall_time_ms = started.elapsed().as_millis() as u64;
    ledger
}

fn execute(task: &TaskSpec, config: &RunConfig, deps: RunDeps<'_>, ledger: &mut RunLedger) {
    let retriever = deps.index.map(|index| ShotRetriever {
        index,
        provider: deps.provider,
    });
    let plan = match decompose(&task.description, retriever, deps.llm, config.shots_k, deps.template) {
        Ok(d) => {
            ledger.push_exchange(ExchangePhase::Decomposition, d.exchange);
            ledger.discarded = d.discarded;
            d.steps
        }
        Err(err) => {
            let infrastructure = decompose_is_infrastructure(&err);
            if let Some(exchange) = err.exchange() {
                ledger.push_exchange(ExchangePhase::Decomposition, exchange.clone());
            }
            ledger.fail(RunStatus::FailedDecomposition, err.to_string(), infrastructure);
            return;
        }
    };
    ledger.plan = plan.clone();

    let mut session = match deps.device.open() {
        Ok(s) => s,
        Err(e) => {
            ledger.fail(RunStatus::FailedTransition { step: 0 }, e.to_string(), true);
            return;
        }
    };
    let mut screen = match session.capture_screen() {
        Ok(s) => s,
        Err(e) => {
            ledger.fail(RunStatus::FailedTransition { step: 0 }, e.to_string(), true);
            session.close();
            return;
        }
    };
    ledger.screen_trace.push(screen.screen_id.clone());

    for step in &plan {
        if ledger.steps_executed >= config.max_steps {
            ledger.fail(
                RunStatus::AbortedBudget,
                format!("plan has {} steps, budget is {}", plan.len(), config.max_steps),
                false,
            );
            break;
        }
        let element = if step.kind == ActionKind::Back {
            None
        } else {
            match resolve(&step.target_phrase, &screen, deps.provider, deps.llm, &config.mapper) {
                Ok(outcome) => {
                    if let Some(exchange) = outcome.exchange {
                        ledger.push_exchange(ExchangePhase::Mapping { step: step.index }, exchange);
                    }
                    ledger.mappings.push(StepMapping {
                        step: step.index,
                        target: step.target_phrase.clone(),
                        element_id: outcome.matched.element_id,
                        method: outcome.method,
                        best_score: outcome.best_score,
                    });
                    Some(outcome.matched)
                }
                Err(err) => {
                    if let Some(exchange) = err.exchange() {
                        ledger.push_exchange(ExchangePhase::Mapping { step: step.index }, exchange.clone());
                    }
                    let infrastructure = matches!(err, ResolveError::Llm(_));
                    ledger.fail(RunStatus::FailedMapping { step: step.index }, err.to_string(), infrastructure);
                    break;
                }
            }
        };
        if let Err(e) = session.perform(element.as_ref(), step) {
            let infrastructure = !matches!(e, crate::device::DeviceError::NoTransition { .. });
            ledger.fail(RunStatus::FailedTransition { step: step.index }, e.to_string(), infrastructure);
            break;
        }
        ledger.steps_executed += 1;
        screen = match session.capture_screen() {
            Ok(s) => s,
            Err(e) => {
                ledger.fail(RunStatus::FailedTransition { step: step.index }, e.to_string(), true);
                break;
            }
        };
        ledger.screen_trace.push(screen.screen_id.clone());
    }
    session.close();

    if ledger.error.is_none() {
        if let Some(expected) = &task.expect_screen {
            let actual = ledger.final_screen().unwrap_or_default().to_string();
            if &actual != expected {
                let message = format!("expected to end on {expected}, ended on {actual}");
                ledger.fail(
                    RunStatus::FailedAssertion {
                        expected: expected.clone(),
                        actual,
                    },
                    message,
                    false,
                );
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub n_tasks: usize,
    pub completed: usize,
    pub completion_rate: f64,
    pub total_cost: Money,
    pub avg_cost: Money,
    pub avg_time_min: f64,
    pub llm_calls: usize,
    pub optimizer_calls: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub status_counts: BTreeMap<String, usize>,
    #[serde(skip)]
    pub ledgers: Vec<RunLedger>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("no ledgers to report on")]
    EmptyInput,
}

impl BatchReport {
    pub fn from_ledgers(ledgers: Vec<RunLedger>) -> Result<Self, ReportError> {
        if ledgers.is_empty() {
            return Err(ReportError::EmptyInput);
        }
        let n = ledgers.len();
        let completed = ledgers.iter().filter(|l| l.status.is_completed()).count();
        let total_cost: Money = ledgers.iter().map(|l| l.total_price).sum();
        let total_ms: u64 = ledgers.iter().map(|l| l.wall_time_ms).sum();
        let mut status_counts = BTreeMap::new();
        for l in &ledgers {
            *status_counts.entry(l.status.label().to_string()).or_insert(0) += 1;
        }
        let exchanges = || ledgers.iter().flat_map(|l| l.exchanges.iter());
        Ok(Self {
            n_tasks: n,
            completed,
            completion_rate: completed as f64 / n as f64,
            total_cost,
            avg_cost: Money::average(total_cost, n),
            avg_time_min: total_ms as f64 / n as f64 / 60_000.0,
            llm_calls: exchanges().count(),
            optimizer_calls: ledgers.iter().map(RunLedger::optimizer_calls).sum(),
            prompt_tokens: exchanges().map(|e| e.exchange.prompt_tokens).sum(),
            completion_tokens: exchanges().map(|e| e.exchange.completion_tokens).sum(),
            status_counts,
            ledgers,
        })
    }
}

/// Runs every task in its own session, up to `config.parallelism` at once.
/// Ledgers come back in task order.
pub fn run_batch(tasks: &[TaskSpec], config: &RunConfig, deps: RunDeps<'_>) -> Result<BatchReport, ReportError> {
    if tasks.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let workers = config.parallelism.clamp(1, tasks.len());
    let slots: Mutex<Vec<Option<RunLedger>>> = Mutex::new(vec![None; tasks.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(i) else { break };
                let ledger = run_task(task, config, deps);
                slots.lock().expect("ledger slots poisoned")[i] = Some(ledger);
            });
        }
    });
    let ledgers = slots
        .into_inner()
        .expect("ledger slots poisoned")
        .into_iter()
        .map(|l| l.expect("every task ran"))
        .collect();
    BatchReport::from_ledgers(ledgers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
}

pub fn report(ledgers: &[RunLedger], format: ReportFormat) -> Result<String, ReportError> {
    let batch = BatchReport::from_ledgers(ledgers.to_vec())?;
    Ok(match format {
        ReportFormat::Json => serde_json::to_string_pretty(&batch).expect("report serializes"),
        ReportFormat::Table => render_table(&batch),
    })
}

fn render_table(b: &BatchReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("tasks {}\n", b.n_tasks));
    out.push_str(&format!(
        "completion {:.1}% ({}/{})\n",
        b.completion_rate * 100.0,
        b.completed,
        b.n_tasks
    ));
    out.push_str(&format!("avg cost {}\n", b.avg_cost));
    out.push_str(&format!("total cost {}\n", b.total_cost));
    out.push_str(&format!("avg time {:.2} min\n", b.avg_time_min));
    out.push_str(&format!(
        "llm calls {} ({} optimizer)\n",
        b.llm_calls, b.optimizer_calls
    ));
    out.push_str(&format!(
        "tokens {} prompt / {} completion\n",
        b.prompt_tokens, b.completion_tokens
    ));
    out.push_str("status:\n");
    for (status, count) in &b.status_counts {
        out.push_str(&format!("  {status:<22}{count}\n"));
    }
    out
}
