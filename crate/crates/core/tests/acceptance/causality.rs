use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topicsum::corpus::{EncodedExample, NUM_SPECIALS};
use topicsum::model::{Hyperparams, Mode, Model};

use crate::Outcome;

const TRIALS: usize = 100;
const VOCAB: u32 = 24;

fn random_tokens(rng: &mut ChaCha8Rng, n: usize) -> Vec<u32> {
    (0..n).map(|_| rng.random_range(NUM_SPECIALS..VOCAB)).collect()
}

fn trial(mode: Mode, rng: &mut ChaCha8Rng) -> (bool, bool) {
    let hp = Hyperparams {
        emb_dim: 8,
        hidden_dim: 8,
        enc_layers: rng.random_range(1..=2),
        dec_layers: rng.random_range(1..=3),
        kernel_width: [3, 5][rng.random_range(0..2)],
        dropout: 0.0,
        max_source_positions: 16,
        max_token_positions: 32,
        max_sentence_positions: 4,
        vocab_size: VOCAB as usize,
        topic_count: 5,
        mode,
    };
    let model = Model::new(hp, rng.random()).unwrap();
    let n = rng.random_range(1..=3);
    let src_len = rng.random_range(3..=12);
    let ex = EncodedExample {
        title: vec!["t".into()],
        source: random_tokens(rng, src_len),
        sentences: (0..n)
            .map(|_| {
                let len = rng.random_range(1..=5);
                random_tokens(rng, len)
            })
            .collect(),
        topic_labels: mode.has_topics().then(|| (0..=n as u32).map(|i| i.min(4)).collect()),
    };
    // decoder rows: sentence t holds <s> plus its tokens, so token j of
    // sentence t is the input of row base_t + 1 + j
    let rows: usize = ex.sentences.iter().map(|s| s.len() + 1).sum();
    let i = rng.random_range(0..rows);
    let mut changed = ex.clone();
    let mut base = 0;
    for s in changed.sentences.iter_mut() {
        for (j, tok) in s.iter_mut().enumerate() {
            if base + 1 + j > i {
                *tok = NUM_SPECIALS + (*tok - NUM_SPECIALS + rng.random_range(1..VOCAB - NUM_SPECIALS)) % (VOCAB - NUM_SPECIALS);
            }
        }
        base += s.len() + 1;
    }
    let a = model.teacher_forced_distributions(&ex).unwrap();
    let b = model.teacher_forced_distributions(&changed).unwrap();
    let logits_ok = (0..=i).all(|r| a.row(r) == b.row(r));

    let s_ok = if mode.is_structured() {
        let mut all_new = ex.clone();
        for s in all_new.sentences.iter_mut() {
            let len = rng.random_range(1..=5);
            *s = random_tokens(rng, len);
        }
        model.sentence_vectors(&ex).unwrap() == model.sentence_vectors(&all_new).unwrap()
    } else {
        true
    };
    (logits_ok, s_ok)
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut detail = Vec::new();
    let mut violations = 0;
    for mode in [Mode::Flat, Mode::Structured, Mode::StructuredTopic] {
        let (mut logit_v, mut s_v) = (0, 0);
        for _ in 0..TRIALS {
            let (l, s) = trial(mode, &mut rng);
            logit_v += usize::from(!l);
            s_v += usize::from(!s);
        }
        violations += logit_v + s_v;
        detail.push(format!("{mode}: {logit_v} logit / {s_v} s_t violations"));
    }
    Outcome::new(violations == 0, format!("{TRIALS} trials per mode; {}", detail.join(", ")))
}
