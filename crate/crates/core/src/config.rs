//! Experiment configuration as flat `key = value` text.
//!
//! Values are layered: built-in defaults, then a config file, then
//! command-line flags, each later layer overriding the earlier one. Two
//! defaults depend on other settings until set explicitly: `lambda_gor`
//! follows the number of negatives and `beta` follows the dataset tag.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::eval::DEFAULT_K;
use crate::model::{AdamConfig, Hyper};
use crate::samplers::{SamplerConfig, Strategy, DEFAULT_S_CLAMP};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("invalid value '{value}' for '{key}': {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("{path}:{line}: expected key = value")]
    Syntax { path: String, line: usize },
    #[error("cannot read config {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetTag {
    #[default]
    Generic,
    AmazonMovies,
    BookCrossing,
    Echonest,
}

impl DatasetTag {
    /// First-stage smoothing exponent used when `beta` is not set.
    pub fn default_beta(self) -> f64 {
        match self {
            DatasetTag::BookCrossing => 0.8,
            _ => 1.0,
        }
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetTag::Generic => "generic",
            DatasetTag::AmazonMovies => "amazon-movies",
            DatasetTag::BookCrossing => "book-crossing",
            DatasetTag::Echonest => "echonest",
        })
    }
}

impl FromStr for DatasetTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "generic" => Ok(DatasetTag::Generic),
            "amazon" | "amazon-movies" => Ok(DatasetTag::AmazonMovies),
            "book-crossing" | "book" | "bookcrossing" => Ok(DatasetTag::BookCrossing),
            "echonest" => Ok(DatasetTag::Echonest),
            other => Err(format!("unknown dataset tag '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetTag,
    pub strategy: Strategy,
    pub beta: Option<f64>,
    pub candidates: usize,
    pub negatives: usize,
    pub s_clamp: f64,
    pub dim: usize,
    pub margin: f64,
    pub lambda_gor: Option<f64>,
    pub lr: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub fold: usize,
    pub k_eval: usize,
    pub exclude_train: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sampler = SamplerConfig::default();
        let hyper = Hyper::default();
        Self {
            dataset: DatasetTag::default(),
            strategy: sampler.strategy,
            beta: None,
            candidates: sampler.candidates,
            negatives: sampler.negatives,
            s_clamp: DEFAULT_S_CLAMP,
            dim: hyper.dim,
            margin: hyper.margin,
            lambda_gor: None,
            lr: hyper.lr,
            adam: hyper.adam,
            batch_size: hyper.batch_size,
            epochs: hyper.epochs,
            seed: hyper.seed,
            fold: 0,
            k_eval: DEFAULT_K,
            exclude_train: true,
        }
    }
}

/// Every recognised key, in the order [`ExperimentConfig::to_kv`] writes them.
pub const KEYS: &[&str] = &[
    "dataset",
    "strategy",
    "beta",
    "candidates",
    "negatives",
    "s_clamp",
    "dim",
    "margin",
    "lambda_gor",
    "lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "batch_size",
    "epochs",
    "seed",
    "fold",
    "k_eval",
    "exclude_train",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: e.to_string(),
        })
}

impl ExperimentConfig {
    /// Sets one key. Hyphens in keys are accepted as underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "dataset" => self.dataset = parse(&key, value)?,
            "strategy" => self.strategy = parse(&key, value)?,
            "beta" => self.beta = Some(parse(&key, value)?),
            "candidates" => self.candidates = parse(&key, value)?,
            "negatives" => self.negatives = parse(&key, value)?,
            "s_clamp" => self.s_clamp = parse(&key, value)?,
            "dim" => self.dim = parse(&key, value)?,
            "margin" => self.margin = parse(&key, value)?,
            "lambda_gor" => self.lambda_gor = Some(parse(&key, value)?),
            "lr" => self.lr = parse(&key, value)?,
            "adam_beta1" => self.adam.beta1 = parse(&key, value)?,
            "adam_beta2" => self.adam.beta2 = parse(&key, value)?,
            "adam_eps" => self.adam.eps = parse(&key, value)?,
            "batch_size" | "batch" => self.batch_size = parse(&key, value)?,
            "epochs" => self.epochs = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "fold" => self.fold = parse(&key, value)?,
            "k_eval" => self.k_eval = parse(&key, value)?,
            "exclude_train" => self.exclude_train = parse(&key, value)?,
            _ => return Err(ConfigError::UnknownKey(key)),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: origin.to_string(),
                line: n + 1,
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn effective_beta(&self) -> f64 {
        self.beta.unwrap_or_else(|| self.dataset.default_beta())
    }

    pub fn effective_lambda_gor(&self) -> f64 {
        self.lambda_gor
            .unwrap_or_else(|| Hyper::default_lambda_gor(self.negatives))
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            strategy: self.strategy,
            beta: self.effective_beta(),
            candidates: self.candidates,
            negatives: self.negatives,
            s_clamp: self.s_clamp,
        }
    }

    pub fn hyper(&self) -> Hyper {
        Hyper {
            dim: self.dim,
            margin: self.margin,
            lambda_gor: self.effective_lambda_gor(),
            lr: self.lr,
            adam: self.adam,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sampler_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.hyper()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.k_eval == 0 {
            return Err(ConfigError::Invalid("k_eval must be >= 1".into()));
        }
        Ok(())
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = match *key {
                "dataset" => self.dataset.to_string(),
                "strategy" => self.strategy.to_string(),
                "beta" => self.effective_beta().to_string(),
                "candidates" => self.candidates.to_string(),
                "negatives" => self.negatives.to_string(),
                "s_clamp" => self.s_clamp.to_string(),
                "dim" => self.dim.to_string(),
                "margin" => self.margin.to_string(),
                "lambda_gor" => self.effective_lambda_gor().to_string(),
                "lr" => self.lr.to_string(),
                "adam_beta1" => self.adam.beta1.to_string(),
                "adam_beta2" => self.adam.beta2.to_string(),
                "adam_eps" => self.adam.eps.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "epochs" => self.epochs.to_string(),
                "seed" => self.seed.to_string(),
                "fold" => self.fold.to_string(),
                "k_eval" => self.k_eval.to_string(),
                "exclude_train" => self.exclude_train.to_string(),
                _ => unreachable!("key list and match out of sync"),
            };
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        }
        out
    }
}
