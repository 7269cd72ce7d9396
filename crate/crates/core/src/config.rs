//! Operator configuration: one JSON document, every key optional.
//!
//! ```json
//! {
//!   "work_root": "/tmp/testforge",
//!   "toolchain": {"command": "cc", "cflags": ["-std=gnu11", "-O1", "-Wall"], "libs": ["-lm"]},
//!   "interpreter": {"command": "python3", "args": []},
//!   "harness_template": null,
//!   "model_id": "gpt-4-0125-preview",
//!   "temperature": 0.2,
//!   "endpoint": null,
//!   "limits": {"compile_timeout_ms": 10000, "run_timeout_ms": 5000,
//!              "generator_timeout_ms": 30000, "memory_bytes": 268435456, "output_cap": 8388608},
//!   "comparison": "trim_trailing",
//!   "workers": 4,
//!   "per_test_seeds": false,
//!   "seeds": {"p07": 761177235},
//!   "separator_nonces": {"p07": 17943918}
//! }
//! ```
//!
//! The API key is never read from here; it comes from `TESTFORGE_API_KEY`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grader::ComparisonPolicy;
use crate::llm::{DEFAULT_MODEL, DEFAULT_TEMPERATURE};
use crate::prompt::ModelSettings;
use crate::runner::{HarnessTemplate, Interpreter, Limits, RunConfig, Toolchain};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Unreadable { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub work_root: PathBuf,
    pub toolchain: Toolchain,
    pub interpreter: Interpreter,
    /// Custom function-harness template; the bundled one when unset.
    pub harness_template: Option<PathBuf>,
    pub model_id: String,
    pub temperature: f64,
    /// Chat-completions base URL for live mode.
    pub endpoint: Option<String>,
    pub limits: Limits,
    pub comparison: ComparisonPolicy,
    pub workers: usize,
    pub per_test_seeds: bool,
    /// Per-problem seed overrides.
    pub seeds: BTreeMap<String, u32>,
    /// Per-problem separator nonce overrides.
    pub separator_nonces: BTreeMap<String, u32>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            work_root: std::env::temp_dir().join("testforge"),
            toolchain: Toolchain::default(),
            interpreter: Interpreter::default(),
            harness_template: None,
            model_id: DEFAULT_MODEL.to_owned(),
            temperature: DEFAULT_TEMPERATURE,
            endpoint: None,
            limits: Limits::default(),
            comparison: ComparisonPolicy::default(),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            per_test_seeds: false,
            seeds: BTreeMap::new(),
            separator_nonces: BTreeMap::new(),
        }
    }
}

impl Config {
    pub fn from_json(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: Config = serde_json::from_str(text)
            .map_err(|e| ConfigError::Malformed { path: path.to_owned(), message: e.to_string() })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Unreadable { path: path.to_owned(), source })?;
        let mut cfg = Self::from_json(&text, path)?;
        // Relative paths inside the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.work_root.is_relative() {
            cfg.work_root = base.join(&cfg.work_root);
        }
        if let Some(t) = cfg.harness_template.as_mut().filter(|t| t.is_relative()) {
            *t = base.join(&*t);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let l = &self.limits;
        for (name, d) in [
            ("compile_timeout_ms", l.compile_timeout),
            ("run_timeout_ms", l.run_timeout),
            ("generator_timeout_ms", l.generator_timeout),
        ] {
            if d.is_zero() {
                return Err(ConfigError::Invalid(format!("limits.{name} must be positive")));
            }
        }
        if l.memory_bytes == 0 || l.output_cap == 0 {
            return Err(ConfigError::Invalid("limits.memory_bytes and limits.output_cap must be positive".into()));
        }
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ConfigError::Invalid(format!("temperature {} is outside [0, 2]", self.temperature)));
        }
        if self.toolchain.command.trim().is_empty() || self.interpreter.command.trim().is_empty() {
            return Err(ConfigError::Invalid("toolchain and interpreter commands must be set".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> ModelSettings {
        ModelSettings { model_id: self.model_id.clone(), temperature: self.temperature }
    }

    pub fn run_config(&self) -> Result<RunConfig, ConfigError> {
        let template = match &self.harness_template {
            None => HarnessTemplate::default(),
            Some(p) => HarnessTemplate::new(
                fs::read_to_string(p).map_err(|source| ConfigError::Unreadable { path: p.clone(), source })?,
            ),
        };
        Ok(RunConfig {
            toolchain: self.toolchain.clone(),
            limits: self.limits,
            interpreter: self.interpreter.clone(),
            template,
            work_root: self.work_root.clone(),
        })
    }
}
