use std::path::{Path, PathBuf};
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::Deserialize;

use cat_core::llm::PriceModel;
use cat_core::mapper::MapperConfig;
use cat_core::runner::RunConfig;

/// Where completions come from.
#[derive(Debug, Clone, PartialEq)]
pub enum LlmSource {
    Remote,
    /// Replay a recorded fixture directory; misses are errors.
    Fixture(PathBuf),
    /// Replay, and call the remote model on a miss, saving the answer.
    Record(PathBuf),
}

impl FromStr for LlmSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            _ if s == "remote" => Ok(Self::Remote),
            Some(("fixture", dir)) if !dir.is_empty() => Ok(Self::Fixture(dir.into())),
            Some(("record", dir)) if !dir.is_empty() => Ok(Self::Record(dir.into())),
            _ => Err(format!("llm must be remote, fixture:<dir> or record:<dir>, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeviceSource {
    /// Simulated app model (JSON).
    Sim(PathBuf),
    /// Command adapter configuration (TOML).
    Cmd(PathBuf),
    /// Stock adb commands, optionally pinned to one serial.
    Adb(Option<String>),
}

impl FromStr for DeviceSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            _ if s == "adb" => Ok(Self::Adb(None)),
            Some(("adb", serial)) if !serial.is_empty() => Ok(Self::Adb(Some(serial.into()))),
            Some(("sim", path)) if !path.is_empty() => Ok(Self::Sim(path.into())),
            Some(("cmd", path)) if !path.is_empty() => Ok(Self::Cmd(path.into())),
            _ => Err(format!("device must be sim:<app.json>, cmd:<adapter.toml>, adb or adb:<serial>, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProviderSource {
    HashedTrigram,
    /// Remote encoder endpoint.
    Remote(String),
}

impl FromStr for ProviderSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            _ if s == "hashed-trigram-256" => Ok(Self::HashedTrigram),
            Some(("remote", url)) if !url.is_empty() => Ok(Self::Remote(url.into())),
            _ => Err(format!("provider must be hashed-trigram-256 or remote:<url>, got {s:?}")),
        }
    }
}

/// Config file contents. Every key is optional; flags override it.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub provider: Option<String>,
    pub provider_dimension: Option<usize>,
    pub llm: Option<String>,
    pub llm_endpoint: Option<String>,
    pub llm_model: Option<String>,
    pub timeout_secs: Option<u64>,
    pub device: Option<String>,
    pub shots_k: Option<usize>,
    pub max_steps: Option<usize>,
    pub parallelism: Option<usize>,
    pub mapper: Option<FileMapper>,
    pub price: Option<FilePrice>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileMapper {
    pub threshold: Option<f64>,
    pub optimizer_enabled: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilePrice {
    pub prompt_rate: Option<Decimal>,
    pub completion_rate: Option<Decimal>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Flag values; `None` means "not given on the command line".
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub provider: Option<String>,
    pub provider_dimension: Option<usize>,
    pub llm: Option<String>,
    pub llm_endpoint: Option<String>,
    pub llm_model: Option<String>,
    pub timeout_secs: Option<u64>,
    pub device: Option<String>,
    pub shots_k: Option<usize>,
    pub max_steps: Option<usize>,
    pub parallelism: Option<usize>,
    pub threshold: Option<f64>,
    pub no_optimizer: bool,
    pub prompt_rate: Option<Decimal>,
    pub completion_rate: Option<Decimal>,
}

/// Fully resolved and validated settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub provider: ProviderSource,
    pub provider_dimension: usize,
    pub llm: LlmSource,
    pub llm_endpoint: String,
    pub llm_model: String,
    pub timeout_secs: u64,
    pub device: Option<DeviceSource>,
    pub run: RunConfig,
    pub price: PriceModel,
}

pub const DEFAULT_LLM_ENDPOINT: &str = "http://127.0.0.1:8080/v1/complete";
pub const DEFAULT_LLM_MODEL: &str = "gpt-4";

impl Config {
    /// Layers defaults, then the file, then flags, and validates the result.
    pub fn resolve(file: FileConfig, flags: Overrides) -> Result<Self, String> {
        let mapper = file.mapper.unwrap_or_default();
        let price = file.price.unwrap_or_default();
        let defaults = RunConfig::default();
        let default_price = PriceModel::default();

        let provider = flags
            .provider
            .or(file.provider)
            .unwrap_or_else(|| "hashed-trigram-256".into())
            .parse()?;
        let llm = flags.llm.or(file.llm).unwrap_or_else(|| "remote".into()).parse()?;
        let device = flags.device.or(file.device).map(|d| d.parse()).transpose()?;

        let optimizer_enabled = if flags.no_optimizer {
            false
        } else {
            mapper.optimizer_enabled.unwrap_or(defaults.mapper.optimizer_enabled)
        };
        let run = RunConfig {
            shots_k: flags.shots_k.or(file.shots_k).unwrap_or(defaults.shots_k),
            max_steps: flags.max_steps.or(file.max_steps).unwrap_or(defaults.max_steps),
            parallelism: flags.parallelism.or(file.parallelism).unwrap_or(defaults.parallelism),
            mapper: MapperConfig {
                threshold: flags.threshold.or(mapper.threshold).unwrap_or(defaults.mapper.threshold),
                optimizer_enabled,
            },
        };
        let price = PriceModel::new(
            flags.prompt_rate.or(price.prompt_rate).unwrap_or(default_price.prompt_rate),
            flags.completion_rate.or(price.completion_rate).unwrap_or(default_price.completion_rate),
        )?;

        let config = Self {
            provider,
            provider_dimension: flags.provider_dimension.or(file.provider_dimension).unwrap_or(256),
            llm,
            llm_endpoint: flags
                .llm_endpoint
                .or(file.llm_endpoint)
                .unwrap_or_else(|| DEFAULT_LLM_ENDPOINT.into()),
            llm_model: flags.llm_model.or(file.llm_model).unwrap_or_else(|| DEFAULT_LLM_MODEL.into()),
            timeout_secs: flags.timeout_secs.or(file.timeout_secs).unwrap_or(60),
            device,
            run,
            price,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), String> {
        let t = self.run.mapper.threshold;
        if !(0.0..=1.0).contains(&t) {
            return Err(format!("mapper.threshold must lie in [0, 1], got {t}"));
        }
        if self.run.max_steps == 0 {
            return Err("max_steps must be at least 1".into());
        }
        if self.run.parallelism == 0 {
            return Err("parallelism must be at least 1".into());
        }
        if self.provider_dimension == 0 {
            return Err("provider_dimension must be at least 1".into());
        }
        if self.timeout_secs == 0 {
            return Err("timeout_secs must be at least 1".into());
        }
        Ok(())
    }
}
