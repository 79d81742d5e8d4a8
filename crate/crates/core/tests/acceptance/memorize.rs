use topicsum::inference::{generate, DecodeConfig};
use topicsum::model::{Mode, Model};
use topicsum::synth::{encoded_corpus, SynthConfig};
use topicsum::trainer::{train, TrainConfig};

use crate::common::small;
use crate::Outcome;

pub fn run() -> Outcome {
    let synth = SynthConfig { instances: 50, ..Default::default() };
    let (data, vocab) = encoded_corpus(&synth).unwrap();
    let cfg = TrainConfig {
        momentum: 0.95,
        batch_size: 4,
        max_epochs: 200,
        eval_every: 10,
        target_train_loss: Some(0.002),
        ..Default::default()
    };
    let model = Model::new(small(vocab.len(), synth.topics + 1, Mode::StructuredTopic), 1).unwrap();
    // the training set doubles as dev set so the learning rate anneals
    let out = train(model, &data, &data, &vocab, &cfg, |_| Ok(())).unwrap();
    let reached = out.log.iter().find(|r| r.train_token_loss < 0.1).map(|r| r.epoch);
    let last = out.log.last().unwrap();
    let decode = DecodeConfig::default();
    let exact = data
        .iter()
        .filter(|ex| generate(&out.best, &ex.source, &decode).unwrap().sentences == ex.sentences)
        .count();
    let frac = exact as f64 / data.len() as f64;
    let epoch = reached.map_or("never".to_string(), |e| format!("epoch {e}"));
    Outcome::new(
        reached.is_some() && frac >= 0.9,
        format!(
            "token loss < 0.1 at {epoch} (final {:.4} after {} epochs); {exact}/{} summaries reproduced exactly with beam 5",
            last.train_token_loss,
            last.epoch,
            data.len()
        ),
    )
}
