//! Flat `key = value` run configuration.
//!
//! Keys are either run paths (see [`PATH_KEYS`]) or [`TrainingConfig`]
//! field names. Values from the file are overridden by command-line flags,
//! and the resolved set is echoed back in the same format so that a run can
//! be repeated with `--config <out>/config.echo`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::Value;
use treecomp_core::training::TrainingConfig;

pub const PATH_KEYS: [&str; 6] = ["train", "validation", "embeddings", "embedding_dim", "out", "corpus_name"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    entries: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected `key = value`, got {raw:?}", n + 1))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Settings { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Loads `path` if given, otherwise starts empty.
    pub fn from_optional(path: Option<&Path>) -> Result<Self> {
        path.map(Self::load).transpose().map(Option::unwrap_or_default)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Sets `key` only when the flag was given.
    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key).ok_or_else(|| anyhow!("missing required setting `{key}` (flag --{})", key.replace('_', "-")))
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| v.parse().map_err(|_| anyhow!("`{key}` must be a non-negative integer, got {v:?}")))
            .transpose()
    }

    /// Builds the training configuration from defaults plus every
    /// non-path key. Unknown keys are an error.
    pub fn training(&self) -> Result<TrainingConfig> {
        let mut value = serde_json::to_value(TrainingConfig::default()).expect("config serializes");
        let fields = value.as_object_mut().expect("struct serializes to an object");
        for (key, raw) in &self.entries {
            if PATH_KEYS.contains(&key.as_str()) {
                continue;
            }
            let Some(current) = fields.get(key) else {
                bail!("unknown config key `{key}`");
            };
            let parsed = match current {
                Value::Bool(_) => raw.parse::<bool>().ok().map(Value::from),
                Value::Number(n) if n.is_u64() => raw.parse::<u64>().ok().map(Value::from),
                Value::Number(_) => raw.parse::<f64>().ok().filter(|v| v.is_finite()).map(Value::from),
                Value::String(_) => Some(Value::from(raw.as_str())),
                _ => None,
            }
            .ok_or_else(|| anyhow!("invalid value {raw:?} for `{key}`"))?;
            fields.insert(key.clone(), parsed);
        }
        Ok(serde_json::from_value(value)?)
    }

    /// Every path key that is set, followed by every training field, as
    /// `key = value` lines.
    pub fn echo(&self, training: &TrainingConfig) -> String {
        let mut out = String::new();
        for key in PATH_KEYS {
            if let Some(v) = self.get(key) {
                let _ = writeln!(out, "{key} = {v}");
            }
        }
        let value = serde_json::to_value(training).expect("config serializes");
        for (key, v) in value.as_object().expect("object") {
            let text = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            let _ = writeln!(out, "{key} = {text}");
        }
        out
    }
}
