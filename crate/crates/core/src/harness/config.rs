//! Run configuration and its `key = value` file format.
//!
//! ```text
//! # comment
//! grpo.group_size = 5
//! pcar.lambda_max = 0.5
//! paths.corpus = data/corpus.jsonl
//! ```

use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

use crate::advantage::{PcarParams, StdKind};
use crate::objective::ObjectiveConfig;
use crate::retrieval::{Bm25Params, RetrievalConfig};

/// Environment variable naming the default config file.
pub const CONFIG_ENV_VAR: &str = "EVALACT_CONFIG";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("{}unknown key {key:?}", at(*line))]
    UnknownKey { line: usize, key: String },
    #[error("{}invalid value {value:?} for {key}", at(*line))]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

// Line 0 marks a value that did not come from a file.
fn at(line: usize) -> String {
    if line == 0 {
        String::new()
    } else {
        format!("line {line}: ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub length_normalize: bool,
    pub pcar: PcarParams,
    /// Turn PCAR off and broadcast `A_i` to every token.
    pub pcar_enabled: bool,
    pub bm25: Bm25Params,
    pub top_k: usize,
    pub search_budget: usize,
    pub seed: u64,
    pub iterations: usize,
    /// Queries per iteration; 0 uses the whole dataset.
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub rollout_temperature: f64,
    /// Search→Evaluate pairs the stochastic policy may issue per rollout.
    pub max_pairs: usize,
    /// Hard cap on emitted actions per rollout.
    pub max_steps: usize,
    pub corpus: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            group_size: 5,
            clip_eps: 0.2,
            kl_beta: 0.001,
            length_normalize: false,
            pcar: PcarParams::default(),
            pcar_enabled: true,
            bm25: Bm25Params::default(),
            top_k: crate::retrieval::DEFAULT_TOP_K,
            search_budget: crate::retrieval::DEFAULT_SEARCH_BUDGET,
            seed: 0,
            iterations: 30,
            batch_size: 0,
            epochs: 2,
            learning_rate: 3000.0,
            rollout_temperature: 1.0,
            max_pairs: 3,
            max_steps: 64,
            corpus: None,
            dataset: None,
        }
    }
}

impl RunConfig {
    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            clip_eps: self.clip_eps,
            kl_beta: self.kl_beta,
            length_normalize: self.length_normalize,
        }
    }

    pub fn retrieval(&self) -> RetrievalConfig {
        RetrievalConfig {
            bm25: self.bm25,
            top_k: self.top_k,
            search_budget: self.search_budget,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be >= 2");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must be in (0, 1)");
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return bad("kl_beta must be >= 0");
        }
        if self.top_k == 0 {
            return bad("top_k must be >= 1");
        }
        if !(self.rollout_temperature > 0.0 && self.rollout_temperature.is_finite()) {
            return bad("rollout temperature must be > 0");
        }
        if !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite");
        }
        if self.max_pairs == 0 || self.max_steps == 0 {
            return bad("max_pairs and max_steps must be >= 1");
        }
        self.pcar
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_kv(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or(ConfigError::Syntax { line })?;
            self.set(k.trim(), v.trim(), line)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_kv(text)?;
        Ok(c)
    }

    /// Sets one key. `line` is only used for error messages.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
        };
        fn num<T: std::str::FromStr>(v: &str, e: impl Fn() -> ConfigError) -> Result<T, ConfigError> {
            v.parse().map_err(|_| e())
        }
        let float = |v: &str| -> Result<f64, ConfigError> {
            let x: f64 = num(v, bad)?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(bad())
            }
        };
        match key {
            "bm25.k1" => self.bm25.k1 = float(value)?,
            "bm25.b" => self.bm25.b = float(value)?,
            "retrieval.top_k" => self.top_k = num(value, bad)?,
            "episode.search_budget" => self.search_budget = num(value, bad)?,
            "grpo.group_size" => self.group_size = num(value, bad)?,
            "grpo.clip_eps" => self.clip_eps = float(value)?,
            "grpo.kl_beta" => self.kl_beta = float(value)?,
            "grpo.length_normalize" => self.length_normalize = num(value, bad)?,
            "grpo.learning_rate" => self.learning_rate = float(value)?,
            "grpo.epochs" => self.epochs = num(value, bad)?,
            "pcar.enabled" => self.pcar_enabled = num(value, bad)?,
            "pcar.lambda_base" => self.pcar.lambda_base = float(value)?,
            "pcar.lambda_max" => self.pcar.lambda_max = float(value)?,
            "pcar.delta" => self.pcar.delta = float(value)?,
            "pcar.eps" => self.pcar.eps = float(value)?,
            "pcar.std" => {
                self.pcar.std_kind = match value {
                    "population" => StdKind::Population,
                    "sample" => StdKind::Sample,
                    _ => return Err(bad()),
                }
            }
            "run.seed" => self.seed = num(value, bad)?,
            "run.iterations" => self.iterations = num(value, bad)?,
            "run.batch_size" => self.batch_size = num(value, bad)?,
            "run.temperature" => self.rollout_temperature = float(value)?,
            "run.max_pairs" => self.max_pairs = num(value, bad)?,
            "run.max_steps" => self.max_steps = num(value, bad)?,
            "paths.corpus" => self.corpus = Some(PathBuf::from(value)),
            "paths.dataset" => self.dataset = Some(PathBuf::from(value)),
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.group_size, 5);
        assert_eq!(c.top_k, 3);
        assert_eq!(c.search_budget, 20);
        assert_eq!((c.pcar.lambda_base, c.pcar.lambda_max), (0.1, 0.5));
        assert_eq!(c.pcar.delta, 1e-6);
        assert_eq!((c.clip_eps, c.kl_beta), (0.2, 0.001));
    }

    #[test]
    fn parses_kv_file() {
        let c = RunConfig::from_kv(
            "# test\nbm25.k1 = 0.9\n\nretrieval.top_k=5 # inline\npcar.std = sample\npaths.corpus = a/b.jsonl\npcar.enabled = false\n",
        )
        .unwrap();
        assert_eq!(c.bm25.k1, 0.9);
        assert_eq!(c.top_k, 5);
        assert_eq!(c.pcar.std_kind, StdKind::Sample);
        assert_eq!(c.corpus, Some(PathBuf::from("a/b.jsonl")));
        assert!(!c.pcar_enabled);
    }

    #[test]
    fn reports_errors_with_line() {
        assert_eq!(
            RunConfig::from_kv("\nnonsense"),
            Err(ConfigError::Syntax { line: 2 })
        );
        assert!(matches!(
            RunConfig::from_kv("foo.bar = 1"),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::from_kv("grpo.clip_eps = NaN"),
            Err(ConfigError::BadValue { .. })
        ));
        let c = RunConfig {
            group_size: 1,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
