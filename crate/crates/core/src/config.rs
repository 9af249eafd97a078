//! Training configuration and its `key = value` file format.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub validate_every: usize,
    pub negatives: usize,
    pub learning_rate: f64,
    /// `None` trains on all target triplets at once.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Re-split facts and targets every epoch; otherwise split once.
    pub dynamic_split: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            epochs: 10_000,
            validate_every: 200,
            negatives: 10,
            learning_rate: 0.001,
            batch_size: None,
            seed: 0,
            dynamic_split: true,
        }
    }
}

/// Keys accepted by [`TrainConfig::parse`].
pub const KEYS: &[&str] = &[
    "d",
    "d_hat",
    "d_prime",
    "d_hat_prime",
    "L",
    "L_hat",
    "K",
    "K_hat",
    "B",
    "gamma",
    "aggregator",
    "self_loop",
    "relation_update",
    "epochs",
    "validate_every",
    "negatives",
    "lr",
    "batch_size",
    "seed",
    "dynamic_split",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.validate_every == 0 {
            return Err(Error::Config("validate_every must be positive".into()));
        }
        if self.negatives == 0 {
            return Err(Error::Config("negatives must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
        }
        let m = &mut self.model;
        match key {
            "d" => m.rel_dim = num(key, value)?,
            "d_hat" => m.ent_dim = num(key, value)?,
            "d_prime" => m.rel_hidden = num(key, value)?,
            "d_hat_prime" => m.ent_hidden = num(key, value)?,
            "L" => m.rel_layers = num(key, value)?,
            "L_hat" => m.ent_layers = num(key, value)?,
            "K" => m.rel_heads = num(key, value)?,
            "K_hat" => m.ent_heads = num(key, value)?,
            "B" => m.bins = num(key, value)?,
            "gamma" => m.margin = num(key, value)?,
            "aggregator" => m.aggregator = value.parse()?,
            "self_loop" => m.self_loop = value.parse()?,
            "relation_update" => m.relation_update = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "validate_every" => self.validate_every = num(key, value)?,
            "negatives" => self.negatives = num(key, value)?,
            "lr" => self.learning_rate = num(key, value)?,
            "batch_size" => {
                self.batch_size = match value {
                    "full" | "0" => None,
                    v => Some(num(key, v)?),
                }
            }
            "seed" => self.seed = num(key, value)?,
            "dynamic_split" => self.dynamic_split = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serializes every key, so `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let batch = self.batch_size.map_or("full".to_owned(), |b| b.to_string());
        let lines = [
            ("d", m.rel_dim.to_string()),
            ("d_hat", m.ent_dim.to_string()),
            ("d_prime", m.rel_hidden.to_string()),
            ("d_hat_prime", m.ent_hidden.to_string()),
            ("L", m.rel_layers.to_string()),
            ("L_hat", m.ent_layers.to_string()),
            ("K", m.rel_heads.to_string()),
            ("K_hat", m.ent_heads.to_string()),
            ("B", m.bins.to_string()),
            ("gamma", m.margin.to_string()),
            ("aggregator", m.aggregator.to_string()),
            ("self_loop", m.self_loop.to_string()),
            ("relation_update", m.relation_update.to_string()),
            ("epochs", self.epochs.to_string()),
            ("validate_every", self.validate_every.to_string()),
            ("negatives", self.negatives.to_string()),
            ("lr", self.learning_rate.to_string()),
            ("batch_size", batch),
            ("seed", self.seed.to_string()),
            ("dynamic_split", self.dynamic_split.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
