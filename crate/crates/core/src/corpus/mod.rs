//! Corpus construction: paragraph ranking, instance filtering, source
//! building, summary segmentation, vocabulary and train/valid/test splits.

mod rank;
mod segment;
mod vocab;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io;
use crate::text::tokenize;

pub use rank::{paragraph_scores, rank_paragraphs, DEFAULT_PIVOT_SLOPE};
pub use segment::{segment_summary, split_long, split_sentences};
pub use vocab::{Vocab, DEFAULT_VOCAB_SIZE, EOD, EOP, EOS, EOT, NUM_SPECIALS, PAD, SOS, SPECIALS, UNK};

/// Limits applied while building a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub max_source_tokens: usize,
    /// The lead must be strictly longer than this many tokens.
    pub min_lead_tokens: usize,
    /// Minimum number of source documents.
    pub min_docs: usize,
    pub max_sentences: usize,
    pub max_sentence_len: usize,
    /// Leads containing a sentence longer than this are discarded.
    pub max_lead_sentence_len: usize,
    pub vocab_size: usize,
    pub pivot_slope: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            max_source_tokens: 800,
            min_lead_tokens: 23,
            min_docs: 6,
            max_sentences: 15,
            max_sentence_len: 40,
            max_lead_sentence_len: 200,
            vocab_size: DEFAULT_VOCAB_SIZE,
            pivot_slope: DEFAULT_PIVOT_SLOPE,
        }
    }
}

/// One input record as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub title: String,
    pub paragraphs: Vec<String>,
    pub lead: String,
    /// Number of distinct source documents; defaults to the paragraph count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub documents: Option<usize>,
    /// Known sentence topics plus the end-of-topic label, carried through
    /// preprocessing unchanged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_labels: Option<Vec<u32>>,
}

/// A tokenized paragraph cluster with its lead section.
#[derive(Clone, Debug, PartialEq)]
pub struct RawInstance {
    pub title: Vec<String>,
    pub paragraphs: Vec<Vec<String>>,
    pub lead: String,
    pub documents: usize,
    pub topic_labels: Option<Vec<u32>>,
}

impl RawInstance {
    pub fn from_record(rec: &RawRecord) -> Result<Self> {
        let title = tokenize(&rec.title);
        let paragraphs: Vec<Vec<String>> = rec
            .paragraphs
            .iter()
            .map(|p| tokenize(p))
            .filter(|p| !p.is_empty())
            .collect();
        if title.is_empty() {
            return Err(Error::InvalidInput("instance has an empty title".into()));
        }
        if paragraphs.is_empty() {
            return Err(Error::InvalidInput(format!(
                "instance {:?} has no paragraphs",
                rec.title
            )));
        }
        let documents = rec.documents.unwrap_or(paragraphs.len());
        Ok(RawInstance {
            title,
            paragraphs,
            lead: rec.lead.clone(),
            documents,
            topic_labels: rec.topic_labels.clone(),
        })
    }
}

/// Why an instance was left out of the corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    TooFewDocs,
    ShortLead,
    LongSentence,
    TooManySentences,
    /// Given topic labels do not match the segmented summary.
    LabelMismatch,
}

impl Rejection {
    pub fn reason(self) -> &'static str {
        match self {
            Rejection::TooFewDocs => "too_few_docs",
            Rejection::ShortLead => "short_lead",
            Rejection::LongSentence => "long_sentence",
            Rejection::TooManySentences => "too_many_sentences",
            Rejection::LabelMismatch => "label_mismatch",
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.reason())
    }
}

/// Accepts an instance with enough documents, a long enough lead and no
/// overly long lead sentence.
pub fn filter_instance(inst: &RawInstance, cfg: &CorpusConfig) -> Result<(), Rejection> {
    if inst.documents < cfg.min_docs {
        return Err(Rejection::TooFewDocs);
    }
    let lead = tokenize(&inst.lead);
    if lead.len() <= cfg.min_lead_tokens {
        return Err(Rejection::ShortLead);
    }
    if split_sentences(&lead).iter().any(|s| s.len() > cfg.max_lead_sentence_len) {
        return Err(Rejection::LongSentence);
    }
    Ok(())
}

/// Title, `<eot>`, then the ranked paragraphs joined by `<eop>`, cut to `max_tokens`.
pub fn build_source(title: &[String], paragraphs: &[Vec<String>], order: &[usize], max_tokens: usize) -> Vec<String> {
    let mut out: Vec<String> = title.to_vec();
    out.push(SPECIALS[EOT as usize].to_string());
    for (k, &i) in order.iter().enumerate() {
        if k > 0 {
            out.push(SPECIALS[EOP as usize].to_string());
        }
        out.extend(paragraphs[i].iter().cloned());
        if out.len() >= max_tokens {
            break;
        }
    }
    truncate_source(out, max_tokens)
}

pub fn truncate_source(mut tokens: Vec<String>, max_tokens: usize) -> Vec<String> {
    tokens.truncate(max_tokens);
    tokens
}

/// A preprocessed training instance in token form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub title: Vec<String>,
    pub source: Vec<String>,
    pub summary: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_labels: Option<Vec<u32>>,
}

impl Example {
    pub fn summary_len(&self) -> usize {
        self.summary.iter().map(Vec::len).sum()
    }

    /// Checks the structural limits of `cfg`.
    pub fn validate(&self, cfg: &CorpusConfig) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.source.len() > cfg.max_source_tokens {
            return bad(format!("source has {} tokens", self.source.len()));
        }
        if self.summary.is_empty() || self.summary.len() > cfg.max_sentences {
            return bad(format!("summary has {} sentences", self.summary.len()));
        }
        if let Some(s) = self.summary.iter().find(|s| s.len() > cfg.max_sentence_len || s.is_empty()) {
            return bad(format!("summary sentence of {} tokens", s.len()));
        }
        if self.summary_len() <= cfg.min_lead_tokens {
            return bad(format!("summary has only {} tokens", self.summary_len()));
        }
        if let Some(labels) = &self.topic_labels {
            if labels.len() != self.summary.len() + 1 {
                return bad(format!(
                    "{} topic labels for {} sentences",
                    labels.len(),
                    self.summary.len()
                ));
            }
        }
        Ok(())
    }

    pub fn encode(&self, vocab: &Vocab) -> EncodedExample {
        EncodedExample {
            title: self.title.clone(),
            source: vocab.encode(&self.source),
            sentences: self.summary.iter().map(|s| vocab.encode(s)).collect(),
            topic_labels: self.topic_labels.clone(),
        }
    }
}

/// Turns an accepted raw instance into an [`Example`].
pub fn build_example(inst: &RawInstance, cfg: &CorpusConfig) -> Result<Example, Rejection> {
    filter_instance(inst, cfg)?;
    let summary = segment_summary(&inst.lead, cfg.max_sentence_len);
    if summary.len() > cfg.max_sentences {
        return Err(Rejection::TooManySentences);
    }
    if inst.topic_labels.as_ref().is_some_and(|l| l.len() != summary.len() + 1) {
        return Err(Rejection::LabelMismatch);
    }
    let order = rank_paragraphs(&inst.title, &inst.paragraphs, cfg.pivot_slope);
    let source = build_source(&inst.title, &inst.paragraphs, &order, cfg.max_source_tokens);
    Ok(Example {
        title: inst.title.clone(),
        source,
        summary,
        topic_labels: inst.topic_labels.clone(),
    })
}

/// An [`Example`] with source and summary mapped to vocabulary ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub title: Vec<String>,
    pub source: Vec<u32>,
    pub sentences: Vec<Vec<u32>>,
    #[serde(default)]
    pub topic_labels: Option<Vec<u32>>,
}

impl EncodedExample {
    pub fn summary_tokens(&self) -> Vec<u32> {
        self.sentences.iter().flatten().copied().collect()
    }
}

/// Train, validation and test partitions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<EncodedExample>,
    pub valid: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
}

pub const SPLIT_FILES: [&str; 3] = ["train.jsonl", "valid.jsonl", "test.jsonl"];

impl CorpusSplit {
    pub fn parts(&self) -> [&Vec<EncodedExample>; 3] {
        [&self.train, &self.valid, &self.test]
    }

    pub fn parts_mut(&mut self) -> [&mut Vec<EncodedExample>; 3] {
        [&mut self.train, &mut self.valid, &mut self.test]
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        for (name, part) in SPLIT_FILES.iter().zip(self.parts()) {
            write_split(&dir.join(name), part)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let mut split = CorpusSplit::default();
        for (name, part) in SPLIT_FILES.iter().zip(split.parts_mut()) {
            *part = read_split(&dir.join(name))?;
        }
        Ok(split)
    }
}

/// One JSON record per line: title, source ids, sentence ids, topic labels.
pub fn write_split(path: &Path, examples: &[EncodedExample]) -> Result<()> {
    io::write_jsonl(path, examples)
}

pub fn read_split(path: &Path) -> Result<Vec<EncodedExample>> {
    io::read_jsonl(path)
}

fn title_hash(title: &[String]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(title.join(" ").as_bytes());
    h.finalize().into()
}

/// Deterministic 90/5/5 split.
///
/// Examples are ordered by a SHA-256 hash of their title (original index
/// breaks ties); the first 90% go to train, the next 5% to validation and
/// the rest to test. Each partition keeps the original relative order.
pub fn assign_splits<T>(items: Vec<T>, title: impl Fn(&T) -> &[String]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = items.len();
    let n_valid = (n as f64 * 0.05).round() as usize;
    let n_test = (n as f64 * 0.05).round() as usize;
    let n_train = n - n_valid - n_test;
    let mut keyed: Vec<([u8; 32], usize)> =
        items.iter().enumerate().map(|(i, it)| (title_hash(title(it)), i)).collect();
    keyed.sort();
    let mut part = vec![0u8; n];
    for (rank, &(_, i)) in keyed.iter().enumerate() {
        part[i] = if rank < n_train {
            0
        } else if rank < n_train + n_valid {
            1
        } else {
            2
        };
    }
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (i, it) in items.into_iter().enumerate() {
        match part[i] {
            0 => train.push(it),
            1 => valid.push(it),
            _ => test.push(it),
        }
    }
    (train, valid, test)
}

/// Counts of rejected instances per reason.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub input: usize,
    pub accepted: usize,
    pub rejected: std::collections::BTreeMap<Rejection, usize>,
}

pub struct Preprocessed {
    pub split: CorpusSplit,
    pub vocab: Vocab,
    pub stats: PreprocessStats,
}

/// Runs the whole corpus pipeline over tokenized instances.
pub fn preprocess(instances: &[RawInstance], cfg: &CorpusConfig) -> Preprocessed {
    let mut stats = PreprocessStats {
        input: instances.len(),
        ..Default::default()
    };
    let mut examples = Vec::new();
    for inst in instances {
        match build_example(inst, cfg) {
            Ok(ex) => examples.push(ex),
            Err(r) => *stats.rejected.entry(r).or_insert(0) += 1,
        }
    }
    stats.accepted = examples.len();
    let (train, valid, test) = assign_splits(examples, |e: &Example| &e.title);
    let vocab = Vocab::build(
        train
            .iter()
            .flat_map(|e| std::iter::once(e.source.as_slice()).chain(e.summary.iter().map(Vec::as_slice))),
        cfg.vocab_size,
    );
    let enc = |v: Vec<Example>| v.iter().map(|e| e.encode(&vocab)).collect();
    let split = CorpusSplit {
        train: enc(train),
        valid: enc(valid),
        test: enc(test),
    };
    Preprocessed { split, vocab, stats }
}
