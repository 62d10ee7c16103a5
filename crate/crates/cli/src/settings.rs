//! Parameters from an optional TOML file, overridden by flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use emk_core::{SamplingStrategy, Scheme, DEFAULT_DECAY};
use serde::Deserialize;

use crate::UsageError;

/// Every key a config file may set. Flags with the same name win.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileSettings {
    pub order: Option<usize>,
    pub block_length: Option<usize>,
    pub mem_length: Option<usize>,
    pub max_blocks: Option<usize>,
    pub scheme: Option<String>,
    pub strategy: Option<String>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub seeds: Option<usize>,
    pub length: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: Option<String>,
    pub train_strategy: Option<String>,
    pub eval_strategy: Option<String>,
    pub heads: Option<usize>,
    pub head_dim: Option<usize>,
    pub blocks: Option<usize>,
    pub full_grid: Option<bool>,
    pub timings: Option<bool>,
}

impl FileSettings {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }
}

pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn positive(name: &str, value: usize) -> Result<usize, UsageError> {
    if value == 0 {
        return Err(UsageError(format!("--{name} must be at least 1")));
    }
    Ok(value)
}

pub fn scheme(value: &str) -> Result<Scheme, UsageError> {
    value
        .parse()
        .map_err(|e| UsageError(format!("--scheme: {e}")))
}

pub fn alpha(value: Option<f64>) -> Result<f64, UsageError> {
    let a = value.unwrap_or(DEFAULT_DECAY);
    if !(a > 0.0 && a < 1.0) {
        return Err(UsageError(format!("--alpha must lie in (0, 1), got {a}")));
    }
    Ok(a)
}

pub fn strategy(flag: &str, value: &str, alpha: f64) -> Result<SamplingStrategy, UsageError> {
    SamplingStrategy::parse(value, alpha).map_err(|e| UsageError(format!("--{flag}: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

pub fn format(value: &str) -> Result<Format, UsageError> {
    match value {
        "csv" => Ok(Format::Csv),
        "json" => Ok(Format::Json),
        other => Err(UsageError(format!(
            "--format: expected csv or json, got '{other}'"
        ))),
    }
}
