use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::embeddings::EmbedMode;
use crate::error::{Error, Result};
use crate::layers::SplineConfig;
use crate::models::{ConvSettings, ModelSpec, Variant};

pub const DEFAULT_SEED: u64 = 42;

/// Everything that determines a training run apart from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Free-form task name recorded in manifests.
    pub task: Option<String>,
    pub model: Variant,
    pub embed: EmbedMode,
    pub vectors: Option<PathBuf>,
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: Option<u64>,
    pub dropout: f64,
    pub max_len: Option<usize>,
    pub channels: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
    #[serde(flatten)]
    pub spline: SplineConfig,
    #[serde(flatten)]
    pub conv: ConvSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: None,
            model: Variant::KaConvTextMlp,
            embed: EmbedMode::Random,
            vectors: None,
            dim: 300,
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.0,
            seed: None,
            dropout: 0.3,
            max_len: None,
            channels: vec![64, 128, 256],
            kernel_sizes: vec![3, 4, 5],
            spline: SplineConfig::default(),
            conv: ConvSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn model_spec(&self, n_classes: usize) -> ModelSpec {
        ModelSpec {
            variant: self.model,
            embed_dim: self.dim,
            n_classes,
            channels: self.channels.clone(),
            kernel_sizes: self.kernel_sizes.clone(),
            dropout_p: self.dropout,
            spline: self.spline,
            conv: self.conv,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.embed.needs_vectors(), &self.vectors) {
            (false, Some(_)) => {
                return Err(Error::invalid(format!("--vectors conflicts with --embed {}", self.embed)));
            }
            (true, None) => {
                return Err(Error::invalid(format!("--embed {} requires --vectors", self.embed)));
            }
            _ => {}
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.max_len == Some(0) {
            return Err(Error::invalid("max length must be positive"));
        }
        self.model_spec(1).validate()
    }

    /// Builds a config from a flat key/value map. Hyphens in keys are read as
    /// underscores; unknown keys are rejected.
    pub fn from_map(map: Map<String, Value>) -> Result<Self> {
        let known = Self::default().to_map();
        let mut normalized = Map::new();
        for (key, value) in map {
            let key = key.replace('-', "_");
            if !known.contains_key(&key) {
                return Err(Error::invalid(format!("unknown config key {key:?}")));
            }
            normalized.insert(key, value);
        }
        Ok(serde_json::from_value(Value::Object(normalized))?)
    }

    pub fn to_map(&self) -> Map<String, Value> {
        match serde_json::to_value(self) {
            Ok(Value::Object(map)) => map,
            _ => unreachable!("RunConfig serializes to an object"),
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_map(parse_config_map(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Reads either a JSON object or `key = value` lines (`#` starts a comment).
/// Values that parse as JSON keep their type; anything else is a string.
pub fn parse_config_map(text: &str) -> Result<Map<String, Value>> {
    if text.trim_start().starts_with('{') {
        return match serde_json::from_str(text)? {
            Value::Object(map) => Ok(map),
            _ => Err(Error::invalid("config JSON must be an object")),
        };
    }
    let mut map = Map::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(i + 1, "expected key = value"))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::parse(i + 1, "empty key"));
        }
        map.insert(key.to_string(), config_value(value.trim()));
    }
    Ok(map)
}

pub fn config_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}
