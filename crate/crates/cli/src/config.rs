//! Flat dotted key-value configuration (`reward.rho = 1.0`) layered over the
//! built-in defaults.

use std::path::{Path, PathBuf};

use serde::Serialize;
use structreward::reward_engine::RewardConfig;
use structreward::trainer::{BaselineMode, RewardMode, TrainVerifier, TrainerConfig};
use structreward::world_sim::WorldConfig;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("ConfigSyntax: {0}")]
    Syntax(String),
    #[error("UnknownKey: `{0}`")]
    UnknownKey(String),
    #[error("TypeMismatch: `{key}` expects {expected}, found {found}")]
    TypeMismatch { key: String, expected: String, found: String },
    #[error("IoError: {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderSpec {
    Lexical { n: usize },
    Embedding { table: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub reward: RewardConfig,
    pub world: WorldConfig,
    /// Trainer settings; its `reward`, `world` and `seed` are filled from the
    /// top-level sections when training starts.
    pub trainer: TrainerConfig,
    pub similarity: ProviderSpec,
    pub lexicon: Option<PathBuf>,
    pub verifier_timeout_ms: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let trainer = TrainerConfig::default();
        RunConfig {
            seed: None,
            reward: RewardConfig::default(),
            world: trainer.world.clone(),
            trainer,
            similarity: ProviderSpec::Lexical { n: 2 },
            lexicon: None,
            verifier_timeout_ms: 5_000,
        }
    }
}

fn type_name(v: &toml::Value) -> &'static str {
    match v {
        toml::Value::String(_) => "string",
        toml::Value::Integer(_) => "integer",
        toml::Value::Float(_) => "float",
        toml::Value::Boolean(_) => "boolean",
        toml::Value::Datetime(_) => "datetime",
        toml::Value::Array(_) => "array",
        toml::Value::Table(_) => "table",
    }
}

fn mismatch(key: &str, expected: &str, found: impl Into<String>) -> ConfigError {
    ConfigError::TypeMismatch { key: key.into(), expected: expected.into(), found: found.into() }
}

fn float(key: &str, v: &toml::Value) -> Result<f64, ConfigError> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        other => Err(mismatch(key, "a number", type_name(other))),
    }
}

fn uint(key: &str, v: &toml::Value) -> Result<u64, ConfigError> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        toml::Value::Integer(i) => Err(mismatch(key, "a non-negative integer", i.to_string())),
        other => Err(mismatch(key, "a non-negative integer", type_name(other))),
    }
}

fn size(key: &str, v: &toml::Value) -> Result<usize, ConfigError> {
    uint(key, v).map(|u| u as usize)
}

fn boolean(key: &str, v: &toml::Value) -> Result<bool, ConfigError> {
    v.as_bool().ok_or_else(|| mismatch(key, "a boolean", type_name(v)))
}

fn string<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str, ConfigError> {
    v.as_str().ok_or_else(|| mismatch(key, "a string", type_name(v)))
}

fn choice<T: Copy>(key: &str, v: &toml::Value, options: &[(&str, T)]) -> Result<T, ConfigError> {
    let s = string(key, v)?;
    options.iter().find(|(name, _)| *name == s).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        mismatch(key, &format!("one of {}", names.join(", ")), format!("`{s}`"))
    })
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &toml::Value, base: &Path) -> Result<(), ConfigError> {
        let r = &mut self.reward;
        let w = &mut self.world;
        let t = &mut self.trainer;
        match key {
            "seed" => self.seed = Some(uint(key, v)?),
            "reward.alpha_obj" => r.alpha[0] = float(key, v)?,
            "reward.alpha_attr" => r.alpha[1] = float(key, v)?,
            "reward.alpha_rel" => r.alpha[2] = float(key, v)?,
            "reward.lambda_sg" => r.lambda[0] = float(key, v)?,
            "reward.lambda_temp" => r.lambda[1] = float(key, v)?,
            "reward.lambda_vqa" => r.lambda[2] = float(key, v)?,
            "reward.rho" => r.rho = float(key, v)?,
            "reward.kappa" => r.kappa = float(key, v)?,
            "reward.min_weight" => r.min_weight = float(key, v)?,
            "reward.question_budget" => r.question_budget = Some(size(key, v)?),
            "reward.balance" => r.balance = boolean(key, v)?,
            "similarity.provider" => {
                self.similarity = match string(key, v)? {
                    "lexical" => ProviderSpec::Lexical { n: 2 },
                    "embedding" => ProviderSpec::Embedding { table: PathBuf::new() },
                    other => return Err(mismatch(key, "lexical or embedding", format!("`{other}`"))),
                }
            }
            "similarity.ngram" => match &mut self.similarity {
                ProviderSpec::Lexical { n } => *n = size(key, v)?.max(1),
                ProviderSpec::Embedding { .. } => return Err(mismatch(key, "a lexical provider", "embedding")),
            },
            "similarity.table" => self.similarity = ProviderSpec::Embedding { table: base.join(string(key, v)?) },
            "lexicon.path" => self.lexicon = Some(base.join(string(key, v)?)),
            "verifier.timeout_ms" => self.verifier_timeout_ms = uint(key, v)?,
            "world.entities_min" => w.entities.0 = size(key, v)?,
            "world.entities_max" => w.entities.1 = size(key, v)?,
            "world.attributes_min" => w.attributes.0 = size(key, v)?,
            "world.attributes_max" => w.attributes.1 = size(key, v)?,
            "world.relations_min" => w.relations.0 = size(key, v)?,
            "world.relations_max" => w.relations.1 = size(key, v)?,
            "world.events_min" => w.events.0 = size(key, v)?,
            "world.events_max" => w.events.1 = size(key, v)?,
            "world.repeat_prob" => w.repeat_prob = float(key, v)?,
            "world.explicit_order_prob" => w.explicit_order_prob = float(key, v)?,
            "trainer.beta" => t.beta = float(key, v)?,
            "trainer.steps" => t.steps = size(key, v)?,
            "trainer.batch_size" => t.batch_size = size(key, v)?,
            "trainer.learning_rate" => t.learning_rate = float(key, v)?,
            "trainer.temperature" => t.temperature = float(key, v)?,
            "trainer.eval_every" => t.eval_every = size(key, v)?,
            "trainer.eval_worlds" => t.eval_worlds = size(key, v)?,
            "trainer.baseline" => {
                t.baseline = choice(key, v, &[("none", BaselineMode::None), ("moving_average", BaselineMode::MovingAverage)])?
            }
            "trainer.mode" => {
                t.mode = choice(key, v, &[("structured", RewardMode::Structured), ("sentence_baseline", RewardMode::SentenceBaseline)])?
            }
            "trainer.verifier" => {
                t.verifier = choice(key, v, &[("self_belief", TrainVerifier::SelfBelief), ("world_oracle", TrainVerifier::WorldOracle)])?
            }
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Parses `text`; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        let mut cfg = RunConfig::default();
        for (k, v) in &entries {
            cfg.set(k, v, base)?;
        }
        if matches!(&cfg.similarity, ProviderSpec::Embedding { table } if table.as_os_str().is_empty()) {
            return Err(mismatch("similarity.table", "a table path for the embedding provider", "nothing"));
        }
        cfg.reward.validate().map_err(|e| {
            let key = e.to_string().split_whitespace().next().unwrap_or("reward").to_string();
            mismatch(&format!("reward.{key}"), "a valid reward setting", e.to_string())
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        RunConfig::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn trainer_config(&self, seed: u64) -> TrainerConfig {
        TrainerConfig { reward: self.reward.clone(), world: self.world.clone(), seed, ..self.trainer.clone() }
    }
}
