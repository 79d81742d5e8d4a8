use topicsum::inference::{generate, DecodeConfig};
use topicsum::io::to_jsonl;
use topicsum::metrics::{evaluate, EvalItem};
use topicsum::model::{Checkpoint, Hyperparams, Mode, Model};
use topicsum::synth::{encoded_corpus, SynthConfig};
use topicsum::trainer::{train, TrainConfig};

use crate::Outcome;

struct Artifacts {
    log: String,
    best: Vec<u8>,
    last: Vec<u8>,
    report: String,
}

fn pipeline(seed: u64) -> Artifacts {
    let synth = SynthConfig { instances: 24, seed, ..Default::default() };
    let (data, vocab) = encoded_corpus(&synth).unwrap();
    let (train_set, dev) = data.split_at(18);
    let hp = Hyperparams {
        emb_dim: 16,
        hidden_dim: 16,
        enc_layers: 1,
        dec_layers: 2,
        dropout: 0.1,
        max_source_positions: 200,
        ..Hyperparams::new(vocab.len(), synth.topics + 1, Mode::StructuredTopic)
    };
    let cfg = TrainConfig { max_epochs: 3, batch_size: 4, seed, ..Default::default() };
    let out = train(Model::new(hp, seed).unwrap(), train_set, dev, &vocab, &cfg, |_| Ok(())).unwrap();
    let checkpoint = |m: &Model| Checkpoint { model: m.clone(), vocab_fingerprint: vocab.fingerprint() }.to_bytes();
    let decode = DecodeConfig { beam_size: 3, ..Default::default() };
    let texts: Vec<[Vec<String>; 3]> = dev
        .iter()
        .map(|ex| {
            let sys = generate(&out.best, &ex.source, &decode).unwrap();
            [vocab.decode(&sys.tokens()), vocab.decode(&ex.summary_tokens()), vocab.decode(&ex.source)]
        })
        .collect();
    let ids: Vec<String> = (0..texts.len()).map(|i| i.to_string()).collect();
    let items: Vec<EvalItem<'_>> = texts
        .iter()
        .zip(&ids)
        .map(|([s, r, src], id)| EvalItem { id, system: s, reference: r, source: src })
        .collect();
    Artifacts {
        log: to_jsonl(&out.log),
        best: checkpoint(&out.best),
        last: checkpoint(&out.last),
        report: serde_json::to_string_pretty(&evaluate(&items, false)).unwrap(),
    }
}

pub fn run() -> Outcome {
    let (a, b, other) = (pipeline(3), pipeline(3), pipeline(4));
    let checks = [
        ("log", a.log == b.log),
        ("best checkpoint", a.best == b.best),
        ("last checkpoint", a.last == b.last),
        ("report", a.report == b.report),
    ];
    let differing: Vec<&str> = checks.iter().filter(|(_, same)| !same).map(|(n, _)| *n).collect();
    let seed_matters = a.last != other.last;
    Outcome::new(
        differing.is_empty() && seed_matters,
        format!(
            "same seed: {}; another seed changes the checkpoint: {seed_matters}",
            if differing.is_empty() { "all artifacts byte-identical".to_string() } else { format!("{} differ", differing.join(", ")) }
        ),
    )
}
