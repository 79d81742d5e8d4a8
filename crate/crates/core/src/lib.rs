//! Topic-guided multi-document summarization with a structured
//! convolutional decoder.
//!
//! A document-level LSTM plans one vector per summary sentence and a
//! convolutional decoder writes each sentence from its vector. Optionally the
//! planner also predicts each sentence's topic, learned by LDA over summary
//! sentences, and stops at the end-of-topic label.

pub mod corpus;
pub mod error;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod synth;
pub mod text;
pub mod topics;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/topics.md")]
    mod topics {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/decoding.md")]
    mod decoding {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
}
