//! `catctl`: index corpora, run natural-language UI tasks, and report costs.

mod config;

use std::fmt::Display;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rust_decimal::Decimal;

use cat_core::corpus::{load_examples, split_by_activity, ExampleSet};
use cat_core::device::{load_app_model, CommandAdapterConfig, CommandDevice, DeviceFactory, SimulatedDevice};
use cat_core::embed::{EmbeddingProvider, HashedTrigramProvider, RemoteEmbeddingProvider};
use cat_core::llm::{FixtureClient, LlmClient, RemoteLlmClient};
use cat_core::retrieve::{build_index, load_index, save_index, RetrievalIndex};
use cat_core::runner::{report, run_batch, run_task, ReportFormat, RunDeps, RunLedger, TaskSpec};
use cat_core::PromptTemplate;

use config::{Config, DeviceSource, FileConfig, LlmSource, Overrides, ProviderSource};

/// Exit codes. Clap reports its own usage errors with 2 as well.
const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 2;
const EXIT_RUN_FAILED: u8 = 3;
const EXIT_INFRA: u8 = 4;

#[derive(Parser)]
#[command(name = "catctl", version, about = "Natural-language UI task automation with retrieval-augmented decomposition")]
#[command(after_help = "Exit codes: 0 completed, 2 usage error, 3 run failure, 4 infrastructure failure.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed a corpus and write its retrieval index.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Run one task and print its ledger.
    Run {
        /// Task description, e.g. "change username to TEST".
        #[arg(long)]
        task: String,
        /// Screen id the run must end on.
        #[arg(long)]
        expect_screen: Option<String>,
        #[command(flatten)]
        inputs: RunInputs,
        #[command(flatten)]
        settings: Settings,
    },
    /// Run every task in a JSONL file and print the report.
    Batch {
        /// Tasks in corpus format; `steps` are ignored.
        #[arg(long)]
        tasks: PathBuf,
        #[command(flatten)]
        inputs: RunInputs,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        #[command(flatten)]
        settings: Settings,
    },
    /// Re-render a report from persisted ledgers.
    Report {
        #[arg(long)]
        ledgers: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Split a corpus into retrieval and test sets by whole activities.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        /// Directory receiving retrieval.jsonl and test.jsonl.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunInputs {
    /// Retrieval corpus (JSONL).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Prebuilt index for --corpus; built in memory when omitted.
    #[arg(long, requires = "corpus")]
    index: Option<PathBuf>,
    /// Decomposition prompt template; the bundled one when omitted.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Append run ledgers here as JSONL.
    #[arg(long)]
    ledgers: Option<PathBuf>,
}

/// Settings shared with the config file. Each flag names its config key.
#[derive(Args)]
struct Settings {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// [key: provider] hashed-trigram-256 or remote:<url>.
    #[arg(long)]
    provider: Option<String>,
    /// [key: provider_dimension] Vector size of a remote provider.
    #[arg(long)]
    provider_dimension: Option<usize>,
    /// [key: llm] remote, fixture:<dir> or record:<dir>.
    #[arg(long)]
    llm: Option<String>,
    /// [key: llm_endpoint] Completion endpoint for remote and record.
    #[arg(long)]
    llm_endpoint: Option<String>,
    /// [key: llm_model] Model name sent to the endpoint.
    #[arg(long)]
    llm_model: Option<String>,
    /// [key: timeout_secs] Per-request timeout for remote calls.
    #[arg(long)]
    timeout_secs: Option<u64>,
    /// [key: device] sim:<app.json>, cmd:<adapter.toml>, adb or adb:<serial>.
    #[arg(long)]
    device: Option<String>,
    /// [key: shots_k] Retrieved examples per prompt.
    #[arg(long)]
    shots: Option<usize>,
    /// [key: max_steps] Abort plans longer than this.
    #[arg(long)]
    max_steps: Option<usize>,
    /// [key: parallelism] Concurrent tasks in a batch.
    #[arg(long)]
    parallelism: Option<usize>,
    /// [key: mapper.threshold] Similarity needed to skip the optimizer.
    #[arg(long)]
    threshold: Option<f64>,
    /// [key: mapper.optimizer_enabled] Never ask the LLM to pick an element.
    #[arg(long)]
    no_optimizer: bool,
    /// [key: price.prompt_rate] Dollars per million prompt tokens.
    #[arg(long)]
    prompt_rate: Option<Decimal>,
    /// [key: price.completion_rate] Dollars per million completion tokens.
    #[arg(long)]
    completion_rate: Option<Decimal>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Table => ReportFormat::Table,
            Format::Json => ReportFormat::Json,
        }
    }
}

/// A failed command: exit code plus diagnostic.
struct Failure(u8, String);

fn usage(msg: impl Display) -> Failure {
    Failure(EXIT_USAGE, msg.to_string())
}

fn infra(msg: impl Display) -> Failure {
    Failure(EXIT_INFRA, msg.to_string())
}

type CmdResult = Result<u8, Failure>;

impl Settings {
    fn resolve(self) -> Result<Config, Failure> {
        let file = match &self.config {
            Some(path) => FileConfig::load(path).map_err(usage)?,
            None => FileConfig::default(),
        };
        let flags = Overrides {
            provider: self.provider,
            provider_dimension: self.provider_dimension,
            llm: self.llm,
            llm_endpoint: self.llm_endpoint,
            llm_model: self.llm_model,
            timeout_secs: self.timeout_secs,
            device: self.device,
            shots_k: self.shots,
            max_steps: self.max_steps,
            parallelism: self.parallelism,
            threshold: self.threshold,
            no_optimizer: self.no_optimizer,
            prompt_rate: self.prompt_rate,
            completion_rate: self.completion_rate,
        };
        Config::resolve(file, flags).map_err(usage)
    }
}

fn make_provider(config: &Config) -> Box<dyn EmbeddingProvider> {
    match &config.provider {
        ProviderSource::HashedTrigram => Box::new(HashedTrigramProvider::new()),
        ProviderSource::Remote(url) => Box::new(RemoteEmbeddingProvider::new(
            "remote",
            url.clone(),
            config.provider_dimension,
            Duration::from_secs(config.timeout_secs),
        )),
    }
}

fn make_llm(config: &Config) -> Result<Box<dyn LlmClient>, Failure> {
    let remote = || {
        RemoteLlmClient::new(
            config.llm_endpoint.clone(),
            config.llm_model.clone(),
            Duration::from_secs(config.timeout_secs),
            config.price,
        )
    };
    Ok(match &config.llm {
        LlmSource::Remote => Box::new(remote()),
        LlmSource::Fixture(dir) => Box::new(FixtureClient::replay(dir.clone(), config.price).map_err(infra)?),
        LlmSource::Record(dir) => {
            Box::new(FixtureClient::record(dir.clone(), Box::new(remote()), config.price).map_err(infra)?)
        }
    })
}

fn make_device(config: &Config) -> Result<Box<dyn DeviceFactory>, Failure> {
    let source = config
        .device
        .as_ref()
        .ok_or_else(|| usage("no device: pass --device or set `device` in the config"))?;
    Ok(match source {
        DeviceSource::Sim(path) => Box::new(SimulatedDevice::new(load_app_model(path).map_err(infra)?)),
        DeviceSource::Cmd(path) => Box::new(CommandDevice::new(CommandAdapterConfig::load(path).map_err(infra)?)),
        DeviceSource::Adb(serial) => Box::new(CommandDevice::new(CommandAdapterConfig::adb(serial.as_deref()))),
    })
}

fn load_corpus(path: &Path) -> Result<ExampleSet, Failure> {
    load_examples(path).map_err(|e| infra(format!("{}: {e}", path.display())))
}

/// Loaded collaborators for `run` and `batch`.
struct Runtime {
    config: Config,
    provider: Box<dyn EmbeddingProvider>,
    llm: Box<dyn LlmClient>,
    device: Box<dyn DeviceFactory>,
    index: Option<RetrievalIndex>,
    template: PromptTemplate,
}

impl Runtime {
    fn load(inputs: &RunInputs, settings: Settings) -> Result<Self, Failure> {
        let config = settings.resolve()?;
        let provider = make_provider(&config);
        let index = match &inputs.corpus {
            Some(path) => {
                let corpus = load_corpus(path)?;
                Some(match &inputs.index {
                    Some(index) => load_index(index, &corpus).map_err(infra)?,
                    None => build_index(&corpus, provider.as_ref()).map_err(infra)?,
                })
            }
            None if config.run.shots_k > 0 => {
                return Err(usage("--corpus is required when shots_k > 0"));
            }
            None => None,
        };
        let template = match &inputs.template {
            Some(path) => PromptTemplate::load_decomposition(path).map_err(infra)?,
            None => PromptTemplate::decomposition(),
        };
        Ok(Self {
            llm: make_llm(&config)?,
            device: make_device(&config)?,
            config,
            provider,
            index,
            template,
        })
    }

    fn deps(&self) -> RunDeps<'_> {
        RunDeps {
            index: self.index.as_ref(),
            provider: self.provider.as_ref(),
            llm: self.llm.as_ref(),
            device: self.device.as_ref(),
            template: &self.template,
        }
    }
}

fn append_ledgers(path: &Path, ledgers: &[RunLedger]) -> Result<(), Failure> {
    let mut out = String::new();
    for ledger in ledgers {
        out.push_str(&serde_json::to_string(ledger).map_err(infra)?);
        out.push('\n');
    }
    fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| infra(format!("{}: {e}", path.display())))
}

fn read_ledgers(path: &Path) -> Result<Vec<RunLedger>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| infra(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| serde_json::from_str(line).map_err(|e| infra(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn print_ledger(ledger: &RunLedger) {
    println!("task {:?}", ledger.task);
    println!("plan:");
    for step in &ledger.plan {
        println!("  {step}");
    }
    println!("screens {}", ledger.screen_trace.join(" -> "));
    for m in &ledger.mappings {
        println!(
            "  step {} {:?} -> element {} ({:?}, best {:.2})",
            m.step, m.target, m.element_id, m.method, m.best_score
        );
    }
    println!(
        "llm calls {} ({} optimizer), cost {}, time {} ms",
        ledger.llm_calls(),
        ledger.optimizer_calls(),
        ledger.total_price,
        ledger.wall_time_ms
    );
    if let Some(err) = &ledger.error {
        println!("error: {}", err.message);
    }
    println!("status {}", ledger.status);
}

fn cmd_index(corpus: &Path, out: &Path, settings: Settings) -> CmdResult {
    let config = settings.resolve()?;
    let set = load_corpus(corpus)?;
    let index = build_index(&set, make_provider(&config).as_ref()).map_err(infra)?;
    save_index(&index, out).map_err(infra)?;
    println!("indexed {} examples", index.len());
    Ok(EXIT_OK)
}

fn cmd_run(task: String, expect_screen: Option<String>, inputs: RunInputs, settings: Settings) -> CmdResult {
    let rt = Runtime::load(&inputs, settings)?;
    let spec = TaskSpec {
        id: "cli".into(),
        description: task,
        expect_screen,
    };
    let ledger = run_task(&spec, &rt.config.run, rt.deps());
    if let Some(path) = &inputs.ledgers {
        append_ledgers(path, std::slice::from_ref(&ledger))?;
    }
    print_ledger(&ledger);
    Ok(match &ledger.error {
        _ if ledger.status.is_completed() => EXIT_OK,
        Some(err) if err.infrastructure => EXIT_INFRA,
        _ => EXIT_RUN_FAILED,
    })
}

fn cmd_batch(tasks: &Path, inputs: RunInputs, format: Format, settings: Settings) -> CmdResult {
    let set = load_corpus(tasks)?;
    if set.is_empty() {
        return Err(usage(format!("{}: no tasks", tasks.display())));
    }
    let specs: Vec<TaskSpec> = set.examples().iter().map(TaskSpec::from).collect();
    let rt = Runtime::load(&inputs, settings)?;
    let batch = run_batch(&specs, &rt.config.run, rt.deps()).map_err(infra)?;
    if let Some(path) = &inputs.ledgers {
        append_ledgers(path, &batch.ledgers)?;
    }
    print!("{}", report(&batch.ledgers, format.into()).map_err(infra)?);
    let infra_failures = batch
        .ledgers
        .iter()
        .filter(|l| l.error.as_ref().is_some_and(|e| e.infrastructure))
        .count();
    if infra_failures > 0 {
        eprintln!("{infra_failures} task(s) hit infrastructure failures");
        return Ok(EXIT_INFRA);
    }
    Ok(EXIT_OK)
}

fn cmd_report(ledgers: &Path, format: Format) -> CmdResult {
    let ledgers = read_ledgers(ledgers)?;
    print!("{}", report(&ledgers, format.into()).map_err(usage)?);
    Ok(EXIT_OK)
}

fn cmd_split(corpus: &Path, out: &Path, fraction: f64, seed: u64) -> CmdResult {
    let set = load_corpus(corpus)?;
    let (retrieval, test) = split_by_activity(&set, fraction, seed).map_err(usage)?;
    fs::create_dir_all(out).map_err(|e| infra(format!("{}: {e}", out.display())))?;
    for (name, part) in [("retrieval.jsonl", &retrieval), ("test.jsonl", &test)] {
        let path = out.join(name);
        fs::write(&path, part.to_jsonl()).map_err(|e| infra(format!("{}: {e}", path.display())))?;
    }
    println!(
        "split {} examples: {} retrieval, {} test ({} test activities)",
        set.len(),
        retrieval.len(),
        test.len(),
        test.activities().len()
    );
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Index { corpus, out, settings } => cmd_index(&corpus, &out, settings),
        Command::Run {
            task,
            expect_screen,
            inputs,
            settings,
        } => cmd_run(task, expect_screen, inputs, settings),
        Command::Batch {
            tasks,
            inputs,
            format,
            settings,
        } => cmd_batch(&tasks, inputs, format, settings),
        Command::Report { ledgers, format } => cmd_report(&ledgers, format),
        Command::Split {
            corpus,
            out,
            fraction,
            seed,
        } => cmd_split(&corpus, &out, fraction, seed),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, message)) => {
            eprintln!("catctl: {message}");
            ExitCode::from(code)
        }
    }
}
