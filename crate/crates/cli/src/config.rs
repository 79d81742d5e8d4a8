//! Run configuration: one TOML file, overridable through `TOPICSUM_*`
//! environment variables.
//!
//! `TOPICSUM_SEED=3` sets the top-level `seed`; nested keys use a double
//! underscore, so `TOPICSUM_TRAIN__LR=0.1` sets `lr` in `[train]`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use topicsum::corpus::CorpusConfig;
use topicsum::inference::DecodeConfig;
use topicsum::model::{Hyperparams, Mode};
use topicsum::synth::SynthConfig;
use topicsum::topics::{DEFAULT_ALPHA, DEFAULT_ETA, DEFAULT_GRID, DEFAULT_SWEEPS};
use topicsum::trainer::TrainConfig;
use topicsum::{Error, Result};

pub const ENV_PREFIX: &str = "TOPICSUM_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: Mode,
    pub paths: Paths,
    pub corpus: CorpusConfig,
    pub topics: TopicsConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            mode: Mode::StructuredTopic,
            paths: Paths::default(),
            corpus: CorpusConfig::default(),
            topics: TopicsConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Default locations of every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub raw: PathBuf,
    pub corpus: PathBuf,
    pub topic_model: PathBuf,
    pub labeled: PathBuf,
    pub checkpoints: PathBuf,
    pub outputs: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            raw: "data/raw".into(),
            corpus: "data/corpus".into(),
            topic_model: "data/topics.json".into(),
            labeled: "data/labeled".into(),
            checkpoints: "runs/checkpoints".into(),
            outputs: "runs/outputs".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicsConfig {
    /// Topic counts tried; the most coherent model is kept.
    pub grid: Vec<usize>,
    pub alpha: f64,
    pub eta: f64,
    pub sweeps: usize,
    /// Words per topic in the topic summary file.
    pub summary_words: usize,
}

impl Default for TopicsConfig {
    fn default() -> Self {
        TopicsConfig {
            grid: DEFAULT_GRID.to_vec(),
            alpha: DEFAULT_ALPHA,
            eta: DEFAULT_ETA,
            sweeps: DEFAULT_SWEEPS,
            summary_words: 10,
        }
    }
}

/// Architecture sizes; vocabulary size, topic count and mode come from the
/// data and the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub kernel_width: usize,
    pub dropout: f64,
    pub max_source_positions: usize,
    pub max_token_positions: usize,
    pub max_sentence_positions: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let hp = Hyperparams::new(0, 0, Mode::StructuredTopic);
        ModelConfig {
            emb_dim: hp.emb_dim,
            hidden_dim: hp.hidden_dim,
            enc_layers: hp.enc_layers,
            dec_layers: hp.dec_layers,
            kernel_width: hp.kernel_width,
            dropout: hp.dropout,
            max_source_positions: hp.max_source_positions,
            max_token_positions: hp.max_token_positions,
            max_sentence_positions: hp.max_sentence_positions,
        }
    }
}

impl ModelConfig {
    pub fn hyperparams(&self, vocab_size: usize, topic_count: usize, mode: Mode) -> Hyperparams {
        Hyperparams {
            emb_dim: self.emb_dim,
            hidden_dim: self.hidden_dim,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            kernel_width: self.kernel_width,
            dropout: self.dropout,
            max_source_positions: self.max_source_positions,
            max_token_positions: self.max_token_positions,
            max_sentence_positions: self.max_sentence_positions,
            vocab_size,
            topic_count,
            mode,
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies `env` overrides.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = topicsum::io::read_to_string(p)?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {}", p.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        let mut overrides: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        overrides.sort();
        for (key, value) in overrides {
            apply_override(&mut table, &key[ENV_PREFIX.len()..], &value)?;
        }
        let cfg = RunConfig::deserialize(toml::Value::Table(table))
            .map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.decode.validate()?;
        if self.topics.grid.is_empty() || self.topics.grid.contains(&0) {
            return Err(Error::Config("topics.grid needs positive topic counts".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<String> = key.split("__").map(str::to_lowercase).collect();
    if parts.iter().any(String::is_empty) {
        return Err(Error::Config(format!("malformed override {ENV_PREFIX}{key}")));
    }
    // numbers, booleans and arrays parse as TOML; anything else is a string
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, sections) = parts.split_last().expect("at least one part");
    let mut node = table;
    for s in sections {
        node = node
            .entry(s.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{ENV_PREFIX}{key}: {s} is not a section")))?;
    }
    node.insert(last.clone(), value);
    Ok(())
}
