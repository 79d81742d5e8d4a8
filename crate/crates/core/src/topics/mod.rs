//! Sentence-level topic templates: LDA over summary sentences, coherence-guided
//! selection of the topic count, and per-sentence topic annotation.

mod coherence;
mod lda;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, EncodedExample, Vocab};
use crate::error::{Error, Result};
use crate::text::content_stems;

pub use coherence::{npmi_coherence, topic_coherence, Coherence, DEFAULT_TOP_N, DEFAULT_WINDOW};
pub use lda::{
    infer_theta, train_lda, LdaConfig, TopicModel, DEFAULT_ALPHA, DEFAULT_ETA, DEFAULT_SEED, DEFAULT_SWEEPS,
    FOLD_IN_SWEEPS,
};

/// Topic counts searched by default.
pub const DEFAULT_GRID: [usize; 9] = [10, 20, 30, 40, 50, 60, 70, 80, 90];

/// Topic label of a single sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SentenceTopic {
    Topic(u32),
    /// No content word of the sentence is known to the model.
    Unknown,
}

/// Most likely topic of a sentence of content stems; ties go to the lowest id.
pub fn annotate_sentence<S: AsRef<str>>(model: &TopicModel, sentence: &[S]) -> SentenceTopic {
    match infer_theta(model, sentence, FOLD_IN_SWEEPS) {
        Some(theta) => SentenceTopic::Topic(lda::argmax(&theta) as u32),
        None => SentenceTopic::Unknown,
    }
}

/// Topic label sequence of one summary: one label per sentence, then the
/// end-of-topic label `K`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicAssignment {
    labels: Vec<u32>,
}

impl TopicAssignment {
    /// Labels each sentence (given as tokens), resolving unknown sentences
    /// to the model's fallback topic.
    pub fn for_sentences<S: AsRef<str>>(model: &TopicModel, sentences: &[Vec<S>]) -> Self {
        let mut labels: Vec<u32> = sentences
            .iter()
            .map(|s| match annotate_sentence(model, &content_stems(s)) {
                SentenceTopic::Topic(t) => t,
                SentenceTopic::Unknown => model.fallback_topic,
            })
            .collect();
        labels.push(model.eot_label());
        TopicAssignment { labels }
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<u32> {
        self.labels
    }
}

/// Content-stem documents, one per summary sentence, decoded through `vocab`.
pub fn sentence_documents<'a>(
    examples: impl IntoIterator<Item = &'a EncodedExample>,
    vocab: &Vocab,
) -> Vec<Vec<String>> {
    examples
        .into_iter()
        .flat_map(|ex| ex.sentences.iter().map(|s| content_stems(&vocab.decode(s))))
        .collect()
}

pub fn label_example(model: &TopicModel, ex: &mut EncodedExample, vocab: &Vocab) {
    let sentences: Vec<Vec<String>> = ex.sentences.iter().map(|s| vocab.decode(s)).collect();
    ex.topic_labels = Some(TopicAssignment::for_sentences(model, &sentences).into_labels());
}

/// Fills in topic labels for every example of every partition.
pub fn label_corpus(model: &TopicModel, mut split: CorpusSplit, vocab: &Vocab) -> CorpusSplit {
    for part in split.parts_mut() {
        for ex in part.iter_mut() {
            label_example(model, ex, vocab);
        }
    }
    split
}

#[derive(Clone, Debug)]
pub struct Candidate {
    pub k: usize,
    pub coherence: Coherence,
    pub model: TopicModel,
}

/// Trains one model per topic count and ranks them by mean coherence
/// (descending; ties prefer fewer topics).
pub fn grid_search_topics<S: AsRef<str>>(docs: &[Vec<S>], grid: &[usize], cfg: &LdaConfig) -> Result<Vec<Candidate>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty topic-count grid".into()));
    }
    let mut out = Vec::with_capacity(grid.len());
    for &k in grid {
        let model = train_lda(docs, k, cfg)?;
        let coherence = topic_coherence(&model, docs, DEFAULT_TOP_N, DEFAULT_WINDOW);
        out.push(Candidate { k, coherence, model });
    }
    out.sort_by(|a, b| b.coherence.mean.total_cmp(&a.coherence.mean).then(a.k.cmp(&b.k)));
    Ok(out)
}
