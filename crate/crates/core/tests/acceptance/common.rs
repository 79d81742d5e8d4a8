use topicsum::corpus::{preprocess, CorpusConfig, EncodedExample, Preprocessed, RawInstance};
use topicsum::inference::{generate, DecodeConfig};
use topicsum::metrics::{rouge_n, rouge_tokens};
use topicsum::model::{Hyperparams, Mode, Model};
use topicsum::synth::{generate_corpus, SynthConfig};
use topicsum::corpus::Vocab;

/// Desk-scale architecture used by the training criteria.
pub fn small(vocab: usize, topic_count: usize, mode: Mode) -> Hyperparams {
    Hyperparams {
        emb_dim: 32,
        hidden_dim: 32,
        enc_layers: 3,
        dec_layers: 3,
        kernel_width: 3,
        dropout: 0.0,
        max_source_positions: 200,
        max_token_positions: 615,
        max_sentence_positions: 15,
        vocab_size: vocab,
        topic_count,
        mode,
    }
}

/// A synthetic corpus run through the regular preprocessing pipeline.
pub fn synthetic_splits(instances: usize, seed: u64) -> Preprocessed {
    let records = generate_corpus(&SynthConfig { instances, seed, ..Default::default() }).unwrap();
    let inst: Vec<RawInstance> = records.iter().map(|r| RawInstance::from_record(r).unwrap()).collect();
    preprocess(&inst, &CorpusConfig::default())
}

/// Mean ROUGE-1 F of decoded summaries.
pub fn mean_rouge1(model: &Model, data: &[EncodedExample], vocab: &Vocab, cfg: &DecodeConfig) -> f64 {
    let total: f64 = data
        .iter()
        .map(|ex| {
            let out = generate(model, &ex.source, cfg).unwrap();
            let sys = rouge_tokens(&vocab.decode(&out.tokens()));
            let refr = rouge_tokens(&vocab.decode(&ex.summary_tokens()));
            rouge_n(&sys, &refr, 1, false).f
        })
        .sum();
    total / data.len() as f64
}

pub fn has_repeated_trigram(tokens: &[u32]) -> bool {
    let tri: Vec<&[u32]> = tokens.windows(3).collect();
    (0..tri.len()).any(|i| tri[..i].contains(&tri[i]))
}
