//! Layered configuration: built-in defaults < TOML file < environment
//! (`CRYSTAL_KIT_<SECTION>__<KEY>`) < command-line overrides (`key.path=value`).

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::augment::AugmentConfig;
use crate::metrics::MetricsConfig;
use crate::mutate::DEFAULT_TOLERANCE;
use crate::pipeline::{GenerationConfig, IngestConfig};
use crate::scoring::{RemoteConfig, SamplingParams, DEFAULT_TRANSLATIONS};
use crate::validity::ValidityConfig;

pub const ENV_PREFIX: &str = "CRYSTAL_KIT_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("override {0:?} is not of the form key.path=value")]
    BadOverride(String),
    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NGramConfig {
    pub order: usize,
    pub alpha: f64,
    /// Passes over the training records, each with fresh augmentations.
    pub epochs: usize,
}

impl Default for NGramConfig {
    fn default() -> Self {
        NGramConfig { order: 6, alpha: 0.01, epochs: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MutateConfig {
    pub tolerance: f64,
    /// Only used by the scorer-guided policy.
    pub temperature: f64,
    pub guided: bool,
}

impl Default for MutateConfig {
    fn default() -> Self {
        MutateConfig { tolerance: DEFAULT_TOLERANCE, temperature: 1.0, guided: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IptConfig {
    pub translations: usize,
}

impl Default for IptConfig {
    fn default() -> Self {
        IptConfig { translations: DEFAULT_TRANSLATIONS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub jobs: usize,
    pub ingest: IngestConfig,
    pub augment: AugmentConfig,
    pub ngram: NGramConfig,
    pub sampling: SamplingParams,
    pub generation: GenerationConfig,
    pub validity: ValidityConfig,
    pub metrics: MetricsConfig,
    pub remote: RemoteConfig,
    pub mutate: MutateConfig,
    pub ipt: IptConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            jobs: 8,
            ingest: IngestConfig::default(),
            augment: AugmentConfig::default(),
            ngram: NGramConfig::default(),
            sampling: SamplingParams::default(),
            generation: GenerationConfig::default(),
            validity: ValidityConfig::default(),
            metrics: MetricsConfig::default(),
            remote: RemoteConfig::default(),
            mutate: MutateConfig::default(),
            ipt: IptConfig::default(),
        }
    }
}

/// Accumulates layers as a TOML table, then deserializes once.
#[derive(Debug, Clone)]
pub struct ConfigBuilder {
    table: Table,
}

fn merge(base: &mut Table, layer: Table) {
    for (k, v) in layer {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(l)) => merge(b, l),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Numbers, booleans, arrays and inline tables parse as TOML; anything else
/// is taken as a bare string.
fn parse_scalar(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, path: &[&str], value: Value) {
    match path {
        [] => {}
        [last] => {
            table.insert(last.to_string(), value);
        }
        [head, rest @ ..] => {
            let entry = table.entry(head.to_string()).or_insert_with(|| Value::Table(Table::new()));
            if !entry.is_table() {
                *entry = Value::Table(Table::new());
            }
            set_path(entry.as_table_mut().expect("table"), rest, value);
        }
    }
}

impl Default for ConfigBuilder {
    fn default() -> Self {
        ConfigBuilder::new()
    }
}

impl ConfigBuilder {
    pub fn new() -> Self {
        let table = match Value::try_from(Config::default()) {
            Ok(Value::Table(t)) => t,
            _ => Table::new(),
        };
        ConfigBuilder { table }
    }

    pub fn toml_str(mut self, text: &str, origin: &str) -> Result<Self, ConfigError> {
        let layer: Table =
            text.parse().map_err(|e: toml::de::Error| ConfigError::Parse { origin: origin.into(), message: e.to_string() })?;
        merge(&mut self.table, layer);
        Ok(self)
    }

    pub fn file(self, path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        self.toml_str(&text, &path.display().to_string())
    }

    /// `CRYSTAL_KIT_METRICS__COVERAGE__STRUCTURE=0.2` sets
    /// `metrics.coverage.structure`. Variables without a `__` are ignored,
    /// which leaves `CRYSTAL_KIT_API_TOKEN` to the remote client.
    pub fn env_vars(mut self, vars: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut selected: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|rest| (rest.to_ascii_lowercase(), v)))
            .filter(|(k, _)| k.contains("__"))
            .collect();
        selected.sort();
        for (key, raw) in selected {
            let path: Vec<&str> = key.split("__").collect();
            set_path(&mut self.table, &path, parse_scalar(&raw));
        }
        self
    }

    pub fn env(self) -> Self {
        self.env_vars(std::env::vars())
    }

    pub fn set(mut self, assignment: &str) -> Result<Self, ConfigError> {
        let (key, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::BadOverride(assignment.into()))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(ConfigError::BadOverride(assignment.into()));
        }
        set_path(&mut self.table, &path, parse_scalar(raw.trim()));
        Ok(self)
    }

    /// Rejects keys that no field consumes, so typos do not pass silently.
    pub fn build(self) -> Result<Config, ConfigError> {
        let mut unknown = Vec::new();
        let config: Config = serde_ignored::deserialize(Value::Table(self.table), |path| unknown.push(path.to_string()))
            .map_err(|e: toml::de::Error| ConfigError::Parse { origin: "merged layers".into(), message: e.to_string() })?;
        if unknown.is_empty() {
            Ok(config)
        } else {
            Err(ConfigError::UnknownKeys(unknown))
        }
    }
}
