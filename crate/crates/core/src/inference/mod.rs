//! Beam search over sentence tokens, trigram blocking, repeated-sentence
//! discarding, and summary generation for every decoder mode.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{EOD, EOP, EOS, EOT, PAD, SOS};
use crate::error::{Error, Result};
use crate::model::{EncoderOutput, Model};

/// Tokens the decoder may never emit.
pub const BANNED: [u32; 4] = [PAD, SOS, EOP, EOT];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Finished candidates kept per sentence step.
    pub sentence_beam: usize,
    /// Exponent of the length penalty `|y|^alpha`.
    pub length_alpha: f64,
    pub block_trigrams: bool,
    pub overlap_threshold: f64,
    pub max_sentences: usize,
    /// Tokens per sentence, terminal included.
    pub max_sentence_tokens: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 5,
            sentence_beam: 5,
            length_alpha: 1.0,
            block_trigrams: true,
            overlap_threshold: 0.8,
            max_sentences: 15,
            max_sentence_tokens: 40,
        }
    }
}

impl DecodeConfig {
    pub fn greedy() -> Self {
        DecodeConfig {
            beam_size: 1,
            sentence_beam: 1,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.sentence_beam == 0 {
            return Err(Error::Config("beam sizes must be at least 1".into()));
        }
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return Err(Error::Config("overlap_threshold must be in (0, 1]".into()));
        }
        if self.max_sentences == 0 || self.max_sentence_tokens == 0 {
            return Err(Error::Config("sentence limits must be positive".into()));
        }
        if !self.length_alpha.is_finite() || self.length_alpha < 0.0 {
            return Err(Error::Config("length_alpha must be a non-negative number".into()));
        }
        Ok(())
    }
}

/// Next-token log-probabilities for a batch of prefixes.
pub trait TokenScorer {
    fn vocab_size(&self) -> usize;
    fn next_log_probs(&self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>>;
}

/// One partial or finished token sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, terminal included once finished.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    /// Length-normalized score; equals `log_prob` until finished.
    pub score: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Tokens without the terminal.
    pub fn content(&self) -> &[u32] {
        match self.tokens.last() {
            Some(_) if self.finished => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// `log_prob / |y|^alpha`.
pub fn length_normalized(log_prob: f64, len: usize, alpha: f64) -> f64 {
    if alpha == 0.0 {
        log_prob
    } else {
        log_prob / (len.max(1) as f64).powf(alpha)
    }
}

/// Search settings for one token sequence.
#[derive(Clone, Debug)]
pub struct BeamParams<'a> {
    pub beam_size: usize,
    /// Finished hypotheses returned.
    pub n_best: usize,
    pub alpha: f64,
    /// Maximum tokens, terminal included; the last step may only emit a terminal.
    pub max_len: usize,
    pub terminals: &'a [u32],
    pub banned: &'a [u32],
    /// Earlier generated content tokens that trigram blocking also covers.
    pub history: &'a [u32],
    pub block_trigrams: bool,
    /// Tokens skipped by trigram blocking (sentence separators).
    pub separators: &'a [u32],
    /// Longest run of tokens between separators, closing token included;
    /// a full run may only be closed by a separator or terminal.
    pub max_segment: Option<usize>,
}

/// True when appending `candidate` to `stream` would repeat a trigram of `stream`.
pub fn block_trigrams(stream: &[u32], candidate: u32) -> bool {
    let n = stream.len();
    n >= 2 && stream.windows(3).any(|w| w == [stream[n - 2], stream[n - 1], candidate])
}

/// Every token that [`block_trigrams`] forbids after `stream`.
fn blocked_tokens(stream: &[u32]) -> HashSet<u32> {
    let n = stream.len();
    if n < 2 {
        return HashSet::new();
    }
    stream
        .windows(3)
        .filter(|w| w[0] == stream[n - 2] && w[1] == stream[n - 1])
        .map(|w| w[2])
        .collect()
}

/// Multiset token overlap divided by the shorter length.
pub fn sentence_overlap(prev: &[u32], new: &[u32]) -> f64 {
    if prev.is_empty() || new.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for &t in prev {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut shared = 0;
    for t in new {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                shared += 1;
            }
        }
    }
    shared as f64 / prev.len().min(new.len()) as f64
}

/// True when `new` repeats more than `threshold` of `prev`.
pub fn discard_repeated_sentence(prev: &[u32], new: &[u32], threshold: f64) -> bool {
    sentence_overlap(prev, new) > threshold
}

struct Candidate {
    beam: usize,
    token: u32,
    log_prob: f64,
}

/// Length-normalized beam search. Active hypotheses are ranked by raw
/// log-probability; each step keeps the best `2 · beam_size` extensions,
/// moving terminal ones ranked inside the beam to the finished list, and
/// stops once `beam_size` hypotheses have finished.
pub fn beam_search(scorer: &dyn TokenScorer, p: &BeamParams<'_>) -> Result<Vec<Hypothesis>> {
    if p.beam_size == 0 || p.max_len == 0 || p.terminals.is_empty() {
        return Err(Error::InvalidInput("beam search needs a beam, a length and a terminal".into()));
    }
    let k = p.beam_size;
    let vocab = scorer.vocab_size();
    let banned: HashSet<u32> = p.banned.iter().copied().collect();
    let mut active = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        score: 0.0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 0..p.max_len {
        let prefixes: Vec<&[u32]> = active.iter().map(|h| h.tokens.as_slice()).collect();
        let lps = scorer.next_log_probs(&prefixes)?;
        let last_step = step + 1 == p.max_len;
        let mut cands: Vec<Candidate> = Vec::new();
        for (b, (hyp, lp)) in active.iter().zip(&lps).enumerate() {
            if lp.len() != vocab {
                return Err(Error::InvalidInput("scorer returned a distribution of the wrong size".into()));
            }
            let blocked = if p.block_trigrams {
                let mut stream = p.history.to_vec();
                stream.extend(hyp.tokens.iter().filter(|t| !p.separators.contains(t)));
                blocked_tokens(&stream)
            } else {
                HashSet::new()
            };
            let segment = hyp.tokens.iter().rev().take_while(|t| !p.separators.contains(t)).count();
            let must_close = p.max_segment.is_some_and(|m| segment + 1 >= m);
            let mut local: Vec<Candidate> = (0..vocab as u32)
                .filter(|t| !banned.contains(t))
                .filter(|t| !last_step || p.terminals.contains(t))
                .filter(|t| !must_close || p.terminals.contains(t) || p.separators.contains(t))
                .filter(|t| p.terminals.contains(t) || p.separators.contains(t) || !blocked.contains(t))
                .filter(|&t| lp[t as usize] > f64::NEG_INFINITY)
                .map(|t| Candidate {
                    beam: b,
                    token: t,
                    log_prob: hyp.log_prob + lp[t as usize],
                })
                .collect();
            top_candidates(&mut local, 2 * k);
            cands.extend(local);
        }
        top_candidates(&mut cands, 2 * k);
        let mut next = Vec::with_capacity(k);
        for (rank, c) in cands.into_iter().enumerate() {
            let mut tokens = active[c.beam].tokens.clone();
            tokens.push(c.token);
            if p.terminals.contains(&c.token) {
                if rank < k {
                    let score = length_normalized(c.log_prob, tokens.len(), p.alpha);
                    finished.push(Hypothesis {
                        tokens,
                        log_prob: c.log_prob,
                        score,
                        finished: true,
                    });
                }
            } else if next.len() < k {
                next.push(Hypothesis {
                    tokens,
                    log_prob: c.log_prob,
                    score: c.log_prob,
                    finished: false,
                });
            }
        }
        active = next;
        if finished.len() >= k || active.is_empty() {
            break;
        }
    }
    finished.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens)));
    finished.truncate(p.n_best);
    Ok(finished)
}

/// Keeps the `n` best candidates, best first; ties go to the earlier beam and
/// then the lower token id.
fn top_candidates(c: &mut Vec<Candidate>, n: usize) {
    let order = |a: &Candidate, b: &Candidate| {
        b.log_prob
            .total_cmp(&a.log_prob)
            .then(a.beam.cmp(&b.beam))
            .then(a.token.cmp(&b.token))
    };
    if c.len() > n {
        c.select_nth_unstable_by(n, order);
        c.truncate(n);
    }
    c.sort_by(order);
}

/// Scores prefixes with a model's sentence decoder.
pub struct ModelScorer<'a> {
    pub model: &'a Model,
    pub enc: &'a EncoderOutput,
    pub sentence_vector: Option<&'a ndarray::Array2<f64>>,
    pub sentence: Option<usize>,
    pub context: &'a [u32],
}

impl TokenScorer for ModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.hyperparams().vocab_size
    }

    fn next_log_probs(&self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        self.model
            .next_token_log_probs(self.enc, self.sentence_vector, self.sentence, self.context, prefixes)
    }
}

/// Beam search for sentence `t` given its sentence vector.
pub fn beam_search_sentence(
    model: &Model,
    enc: &EncoderOutput,
    s_t: &ndarray::Array2<f64>,
    t: usize,
    history: &[u32],
    cfg: &DecodeConfig,
) -> Result<Vec<Hypothesis>> {
    let scorer = ModelScorer {
        model,
        enc,
        sentence_vector: Some(s_t),
        sentence: Some(t),
        context: &[],
    };
    beam_search(
        &scorer,
        &BeamParams {
            beam_size: cfg.beam_size,
            n_best: cfg.sentence_beam,
            alpha: cfg.length_alpha,
            max_len: cfg.max_sentence_tokens,
            terminals: &[EOS, EOD],
            banned: &BANNED,
            history,
            block_trigrams: cfg.block_trigrams,
            separators: &[],
            max_segment: None,
        },
    )
}

/// Why generation ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EndOfDocument,
    EndOfTopic,
    SentenceLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    /// Sentences without terminal tokens.
    pub sentences: Vec<Vec<u32>>,
    /// Predicted topic label of every document step (topic mode), the
    /// end-of-topic label included when it stopped generation.
    pub topic_labels: Option<Vec<u32>>,
    /// Length-normalized log-probability of all emitted tokens.
    pub score: f64,
    pub stop: StopReason,
}

impl Summary {
    pub fn tokens(&self) -> Vec<u32> {
        self.sentences.concat()
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

/// Generates a summary of `source`.
pub fn generate(model: &Model, source: &[u32], cfg: &DecodeConfig) -> Result<Summary> {
    cfg.validate()?;
    let enc = model.encode(source)?;
    if model.mode().is_structured() {
        generate_structured(model, &enc, cfg)
    } else {
        generate_flat(model, &enc, cfg)
    }
}

/// Greedy topic labels of the document decoder alone, up to and including
/// the first end-of-topic label. The sentence vectors never depend on
/// generated words, so these are the labels [`generate`] would report when
/// no sentence ends the document early.
pub fn predict_topics(model: &Model, source: &[u32], max_sentences: usize) -> Result<Vec<u32>> {
    if !model.mode().has_topics() {
        return Err(Error::InvalidInput(format!("mode {} has no topic head", model.mode())));
    }
    let hp = model.hyperparams();
    let enc = model.encode(source)?;
    let eot_label = hp.topic_count - 1;
    let mut state = model.doc_init(&enc);
    let mut labels = Vec::new();
    for _ in 0..=max_sentences.min(hp.max_sentence_positions) {
        let (next, s) = model.doc_step(&state, &enc)?;
        state = next;
        let label = argmax(&model.topic_probs(&s)?);
        labels.push(label as u32);
        if label == eot_label {
            break;
        }
    }
    Ok(labels)
}

fn generate_structured(model: &Model, enc: &EncoderOutput, cfg: &DecodeConfig) -> Result<Summary> {
    let hp = model.hyperparams();
    let topics = model.mode().has_topics();
    let eot_label = hp.topic_count.saturating_sub(1);
    let limit = cfg.max_sentences.min(hp.max_sentence_positions);
    let mut state = model.doc_init(enc);
    let mut sentences: Vec<Vec<u32>> = Vec::new();
    let mut labels = Vec::new();
    let mut history: Vec<u32> = Vec::new();
    let (mut log_prob, mut emitted) = (0.0, 0usize);
    let mut stop = StopReason::SentenceLimit;
    for t in 0..limit {
        let (next, s) = model.doc_step(&state, enc)?;
        state = next;
        if topics {
            let label = argmax(&model.topic_probs(&s)?);
            labels.push(label as u32);
            if label == eot_label {
                // the sentence step is forced to emit end-of-document
                stop = StopReason::EndOfTopic;
                break;
            }
        }
        let cands = beam_search_sentence(model, enc, &s, t, &history, cfg)?;
        let chosen = cands.into_iter().find(|h| match sentences.last() {
            Some(prev) => !discard_repeated_sentence(prev, h.content(), cfg.overlap_threshold),
            None => true,
        });
        let Some(h) = chosen else { continue };
        log_prob += h.log_prob;
        emitted += h.tokens.len();
        let ends = h.tokens.last() == Some(&EOD);
        let content = h.content().to_vec();
        history.extend(&content);
        sentences.push(content);
        if ends {
            stop = StopReason::EndOfDocument;
            break;
        }
    }
    Ok(Summary {
        sentences,
        topic_labels: topics.then_some(labels),
        score: if emitted == 0 {
            0.0
        } else {
            length_normalized(log_prob, emitted, cfg.length_alpha)
        },
        stop,
    })
}

fn generate_flat(model: &Model, enc: &EncoderOutput, cfg: &DecodeConfig) -> Result<Summary> {
    let max_len = (cfg.max_sentences * cfg.max_sentence_tokens).min(model.hyperparams().max_token_positions);
    let scorer = ModelScorer {
        model,
        enc,
        sentence_vector: None,
        sentence: None,
        context: &[],
    };
    let hyps = beam_search(
        &scorer,
        &BeamParams {
            beam_size: cfg.beam_size,
            n_best: 1,
            alpha: cfg.length_alpha,
            max_len,
            terminals: &[EOD],
            banned: &BANNED,
            history: &[],
            block_trigrams: cfg.block_trigrams,
            separators: &[EOS],
            max_segment: Some(cfg.max_sentence_tokens),
        },
    )?;
    let Some(h) = hyps.into_iter().next() else {
        return Ok(Summary {
            sentences: Vec::new(),
            topic_labels: None,
            score: 0.0,
            stop: StopReason::SentenceLimit,
        });
    };
    let mut sentences: Vec<Vec<u32>> = h.content().split(|&t| t == EOS).map(<[u32]>::to_vec).collect();
    sentences.retain(|s| !s.is_empty());
    let stop = if h.tokens.last() == Some(&EOD) && sentences.len() <= cfg.max_sentences {
        StopReason::EndOfDocument
    } else {
        StopReason::SentenceLimit
    };
    sentences.truncate(cfg.max_sentences);
    Ok(Summary {
        sentences,
        topic_labels: None,
        score: h.score,
        stop,
    })
}
