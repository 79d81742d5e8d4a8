use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decoder variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Single-sequence convolutional decoder with multi-step attention.
    #[serde(rename = "flat")]
    Flat,
    /// Document-level LSTM producing sentence vectors plus sentence-level
    /// convolutional decoder.
    #[serde(rename = "structured")]
    Structured,
    /// Structured decoder trained to predict each sentence's topic.
    #[serde(rename = "structured+topic")]
    StructuredTopic,
}

impl Mode {
    pub fn is_structured(self) -> bool {
        !matches!(self, Mode::Flat)
    }

    pub fn has_topics(self) -> bool {
        matches!(self, Mode::StructuredTopic)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Flat => "flat",
            Mode::Structured => "structured",
            Mode::StructuredTopic => "structured+topic",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(Mode::Flat),
            "structured" => Ok(Mode::Structured),
            "structured+topic" | "structured+t" => Ok(Mode::StructuredTopic),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Architecture sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub kernel_width: usize,
    pub dropout: f64,
    pub max_source_positions: usize,
    /// Decoder token positions; a flat summary needs room for all sentences.
    pub max_token_positions: usize,
    pub max_sentence_positions: usize,
    pub vocab_size: usize,
    /// Topic labels including end-of-topic (`K + 1`); ignored unless the
    /// mode predicts topics.
    pub topic_count: usize,
    pub mode: Mode,
}

impl Hyperparams {
    pub fn new(vocab_size: usize, topic_count: usize, mode: Mode) -> Self {
        Hyperparams {
            emb_dim: 256,
            hidden_dim: 256,
            enc_layers: 4,
            dec_layers: 3,
            kernel_width: 3,
            dropout: 0.2,
            max_source_positions: 800,
            max_token_positions: 15 * 41,
            max_sentence_positions: 15,
            vocab_size,
            topic_count,
            mode,
        }
    }

    pub fn dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if [
            self.emb_dim,
            self.hidden_dim,
            self.enc_layers,
            self.dec_layers,
            self.kernel_width,
            self.max_source_positions,
            self.max_token_positions,
            self.max_sentence_positions,
        ]
        .contains(&0)
        {
            return bad("all dimensions must be positive");
        }
        if self.kernel_width % 2 == 0 {
            return bad("kernel_width must be odd");
        }
        if self.emb_dim != self.hidden_dim {
            return bad("emb_dim and hidden_dim must be equal");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.vocab_size <= crate::corpus::NUM_SPECIALS as usize {
            return bad("vocab_size must exceed the special tokens");
        }
        if self.mode.has_topics() && self.topic_count < 2 {
            return bad("topic mode needs at least one topic plus end-of-topic");
        }
        Ok(())
    }

    /// Input positions one top-layer output depends on in the causal decoder.
    pub fn receptive_field(&self) -> usize {
        (self.kernel_width - 1) * self.dec_layers + 1
    }
}
