use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deep::{DeepAlgorithm, DeepConfig, DeepError};
use crate::env::EnvConfig;
use crate::tabular::{TabularAlgorithm, TabularConfig, TabularError, TabularSettings};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Any trainable algorithm, written as its kebab-case name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Algorithm {
    Deep(DeepAlgorithm),
    Tabular(TabularAlgorithm),
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Deep(a) => a.name(),
            Algorithm::Tabular(a) => a.name(),
        }
    }

    pub fn all() -> impl Iterator<Item = Algorithm> {
        DeepAlgorithm::ALL
            .into_iter()
            .map(Algorithm::Deep)
            .chain(TabularAlgorithm::ALL.into_iter().map(Algorithm::Tabular))
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl TryFrom<String> for Algorithm {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        Algorithm::all().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Algorithm::all().map(Algorithm::name).collect();
            format!("unknown algorithm `{s}`, expected one of {}", names.join(", "))
        })
    }
}

impl From<Algorithm> for String {
    fn from(a: Algorithm) -> String {
        a.name().to_string()
    }
}

/// Ensemble-size timing sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeedSettings {
    pub steps: u64,
    pub repeats: usize,
    /// Ensemble sizes timed after the baseline.
    pub ensemble_sizes: Vec<usize>,
}

impl Default for SpeedSettings {
    fn default() -> Self {
        Self {
            steps: 10_000,
            repeats: 10,
            ensemble_sizes: vec![2, 5, 8],
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_eval_episodes() -> usize {
    10
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_log_interval() -> u64 {
    1
}

fn default_true() -> bool {
    true
}

/// A complete experiment description.
///
/// Fields left out of a config file take the algorithm's defaults when the
/// file is loaded, so a loaded config always has every field set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_interval: Option<u64>,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Evaluate one ensemble member instead of the vote.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_member: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Log training losses every this many updates.
    #[serde(default = "default_log_interval")]
    pub log_interval: u64,
    /// End a seed early once an evaluation reaches this mean return.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_at_return: Option<f64>,
    /// Write a final checkpoint per seed.
    #[serde(default = "default_true")]
    pub checkpoint: bool,
    pub env: EnvConfig,
    #[serde(default)]
    pub deep: DeepConfig,
    #[serde(default)]
    pub tabular: TabularSettings,
    #[serde(default)]
    pub speedtest: SpeedSettings,
}

impl ExperimentConfig {
    /// A config with every optional field at its default.
    pub fn new(algorithm: Algorithm, env: EnvConfig) -> Self {
        let mut c = Self {
            algorithm,
            seeds: default_seeds(),
            total_steps: None,
            eval_interval: None,
            eval_episodes: default_eval_episodes(),
            eval_member: None,
            output_dir: default_output_dir(),
            log_interval: default_log_interval(),
            stop_at_return: None,
            checkpoint: true,
            env,
            deep: DeepConfig::default(),
            tabular: TabularSettings::default(),
            speedtest: SpeedSettings::default(),
        };
        c.fill_defaults();
        c
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut c: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.fill_defaults();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Resolves optional settings to their per-algorithm values.
    pub fn fill_defaults(&mut self) {
        let deep = matches!(self.algorithm, Algorithm::Deep(_));
        self.total_steps.get_or_insert(if deep { 200_000 } else { 1000 });
        self.eval_interval.get_or_insert(if deep { 10_000 } else { 10 });
        if let Algorithm::Tabular(a) = self.algorithm {
            let r = TabularConfig::resolve(a, &self.tabular);
            self.tabular = TabularSettings {
                lr: Some(r.lr),
                init_std: Some(r.init_std),
                ensemble_size: Some(r.ensemble_size),
                mask_p: Some(r.mask_p),
                beta: Some(r.beta),
                epsilon_start: Some(r.epsilon_start),
                epsilon_final: Some(r.epsilon_final),
                epsilon_decay_steps: Some(r.epsilon_decay_steps),
            };
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps.unwrap_or(0)
    }

    pub fn eval_interval(&self) -> u64 {
        self.eval_interval.unwrap_or(1)
    }

    pub fn tabular_config(&self) -> Option<TabularConfig> {
        match self.algorithm {
            Algorithm::Tabular(a) => Some(TabularConfig::resolve(a, &self.tabular)),
            Algorithm::Deep(_) => None,
        }
    }

    pub fn task(&self) -> String {
        self.env.task_name()
    }

    pub fn run_id(&self, seed: u64) -> String {
        format!("{}-{}-s{seed}", self.task(), self.algorithm)
    }

    /// Ensemble members evaluated by the current algorithm.
    pub fn members(&self) -> usize {
        match self.algorithm {
            Algorithm::Deep(a) if a.is_emax() => self.deep.ensemble_size,
            Algorithm::Deep(_) => 1,
            Algorithm::Tabular(_) => self.tabular.ensemble_size.unwrap_or(1),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(invalid("seeds", "seeds must be distinct"));
        }
        if self.eval_interval() == 0 {
            return Err(invalid("eval_interval", "must be positive"));
        }
        if self.eval_episodes == 0 {
            return Err(invalid("eval_episodes", "must be positive"));
        }
        if self.log_interval == 0 {
            return Err(invalid("log_interval", "must be positive"));
        }
        if let Some(r) = self.stop_at_return {
            if !r.is_finite() {
                return Err(invalid("stop_at_return", "must be finite"));
            }
        }
        self.env.validate().map_err(|e| invalid("env", e.to_string()))?;
        match self.algorithm {
            Algorithm::Deep(a) => {
                self.deep.validate(a).map_err(|e| match e {
                    DeepError::InvalidSetting { field, reason } => invalid(format!("deep.{field}"), reason),
                    other => invalid("deep", other.to_string()),
                })?;
            }
            Algorithm::Tabular(a) => {
                if self.env != EnvConfig::Climbing {
                    return Err(invalid("env", "tabular algorithms run on the climbing game only"));
                }
                let cfg = TabularConfig::resolve(a, &self.tabular);
                cfg.validate(a).map_err(|e| match e {
                    TabularError::InvalidSetting { field, reason } => invalid(format!("tabular.{field}"), reason),
                    other => invalid("tabular", other.to_string()),
                })?;
            }
        }
        if let Some(k) = self.eval_member {
            if k >= self.members() {
                return Err(invalid(
                    "eval_member",
                    format!("member {k} does not exist in an ensemble of {}", self.members()),
                ));
            }
        }
        let s = &self.speedtest;
        if s.steps == 0 || s.repeats == 0 {
            return Err(invalid("speedtest", "steps and repeats must be positive"));
        }
        if s.ensemble_sizes.iter().any(|&k| k < 2) {
            return Err(invalid("speedtest.ensemble_sizes", "ensemble sizes must be at least 2"));
        }
        Ok(())
    }
}
