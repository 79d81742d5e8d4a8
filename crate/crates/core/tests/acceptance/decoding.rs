use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topicsum::corpus::{EOD, EOS, NUM_SPECIALS};
use topicsum::inference::{
    beam_search, generate, length_normalized, BeamParams, DecodeConfig, ModelScorer, TokenScorer, BANNED,
};
use topicsum::model::{Hyperparams, Mode, Model};

use crate::common::has_repeated_trigram;
use crate::Outcome;

const MODES: [Mode; 3] = [Mode::Flat, Mode::Structured, Mode::StructuredTopic];

fn toy(vocab: usize, mode: Mode) -> Hyperparams {
    Hyperparams {
        emb_dim: 8,
        hidden_dim: 8,
        enc_layers: 1,
        dec_layers: 2,
        kernel_width: 3,
        dropout: 0.0,
        max_source_positions: 40,
        max_token_positions: 15 * 41,
        max_sentence_positions: 15,
        vocab_size: vocab,
        topic_count: 4,
        mode,
    }
}

/// Best length-normalized sequence over every sequence of at most `max_len`
/// tokens that ends in a terminal.
fn exhaustive(scorer: &dyn TokenScorer, p: &BeamParams<'_>) -> (Vec<u32>, f64) {
    let inner: Vec<u32> = (0..scorer.vocab_size() as u32)
        .filter(|t| !p.banned.contains(t) && !p.terminals.contains(t))
        .collect();
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    let mut stack: Vec<(Vec<u32>, f64)> = vec![(vec![], 0.0)];
    while let Some((prefix, lp)) = stack.pop() {
        let dist = scorer.next_log_probs(&[&prefix]).unwrap().remove(0);
        for &t in p.terminals {
            let mut done = prefix.clone();
            done.push(t);
            let score = length_normalized(lp + dist[t as usize], done.len(), p.alpha);
            if score > best.1 || (score == best.1 && done < best.0) {
                best = (done, score);
            }
        }
        if prefix.len() + 1 < p.max_len {
            for &t in &inner {
                let mut next = prefix.clone();
                next.push(t);
                stack.push((next, lp + dist[t as usize]));
            }
        }
    }
    best
}

/// Full-width beam against enumeration on toy sentence and flat decoders.
fn beam_matches_exhaustive() -> (usize, usize) {
    let (mut agree, mut total) = (0, 0);
    for seed in 0..10 {
        for mode in [Mode::Flat, Mode::Structured] {
            let model = Model::new(toy(11, mode), seed).unwrap();
            let enc = model.encode(&[7, 8, 9, 10]).unwrap();
            let s1 = mode.is_structured().then(|| model.doc_step(&model.doc_init(&enc), &enc).unwrap().1);
            let scorer = ModelScorer {
                model: &model,
                enc: &enc,
                sentence_vector: s1.as_ref(),
                sentence: mode.is_structured().then_some(0),
                context: &[],
            };
            let terminals: &[u32] = if mode.is_structured() { &[EOS, EOD] } else { &[EOD] };
            for alpha in [0.0, 1.0] {
                let p = BeamParams {
                    beam_size: 1000,
                    n_best: 1,
                    alpha,
                    max_len: 4,
                    terminals,
                    banned: &BANNED,
                    history: &[],
                    block_trigrams: false,
                    separators: &[],
                    max_segment: None,
                };
                let found = beam_search(&scorer, &p).unwrap();
                let (seq, score) = exhaustive(&scorer, &p);
                total += 1;
                agree += usize::from(found[0].tokens == seq && (found[0].score - score).abs() < 1e-12);
            }
        }
    }
    (agree, total)
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = DecodeConfig::default();
    let (mut repeats, mut overruns) = (0, 0);
    let runs = 1000;
    for i in 0..runs {
        let model = Model::new(toy(24, MODES[i % 3]), rng.random()).unwrap();
        let len = rng.random_range(1..=30);
        let src: Vec<u32> = (0..len).map(|_| rng.random_range(NUM_SPECIALS..24)).collect();
        let out = generate(&model, &src, &cfg).unwrap();
        repeats += usize::from(has_repeated_trigram(&out.tokens()));
        let within = out.sentences.len() <= cfg.max_sentences
            && out.sentences.iter().all(|s| s.len() < cfg.max_sentence_tokens);
        overruns += usize::from(!within);
    }
    let (agree, total) = beam_matches_exhaustive();
    Outcome::new(
        repeats == 0 && overruns == 0 && agree == total,
        format!(
            "{runs} generations: {repeats} with repeated trigrams, {overruns} past the 15 x 40 cap; beam = exhaustive on {agree}/{total} toy searches"
        ),
    )
}
