use std::collections::BTreeMap;

use topicsum::corpus::Preprocessed;
use topicsum::inference::{predict_topics, DecodeConfig};
use topicsum::model::{Mode, Model};
use topicsum::trainer::{train, TrainConfig};

use crate::common::{mean_rouge1, small, synthetic_splits};
use crate::Outcome;

const INSTANCES: usize = 500;
const SEEDS: [u64; 3] = [1, 2, 3];

pub struct SeedRun {
    pub data: Preprocessed,
    pub flat: Model,
    pub topic: Model,
}

/// Flat and structured+topic models per corpus seed, trained on demand.
#[derive(Default)]
pub struct Runs(BTreeMap<u64, SeedRun>);

impl Runs {
    fn get(&mut self, seed: u64) -> &SeedRun {
        self.0.entry(seed).or_insert_with(|| {
            let data = synthetic_splits(INSTANCES, seed);
            let flat = fit(&data, Mode::Flat, seed);
            let topic = fit(&data, Mode::StructuredTopic, seed);
            SeedRun { data, flat, topic }
        })
    }
}

fn fit(data: &Preprocessed, mode: Mode, seed: u64) -> Model {
    let s = &data.split;
    let topic_count = s.train.iter().flat_map(|e| e.topic_labels.as_deref().unwrap()).max().unwrap() + 1;
    let model = Model::new(small(data.vocab.len(), topic_count as usize, mode), seed).unwrap();
    let cfg = TrainConfig {
        momentum: 0.95,
        batch_size: 8,
        max_epochs: 30,
        eval_every: 5,
        seed,
        ..Default::default()
    };
    train(model, &s.train, &s.valid, &data.vocab, &cfg, |_| Ok(())).unwrap().best
}

pub fn topic_guidance(runs: &mut Runs) -> Outcome {
    let run = runs.get(SEEDS[0]);
    let test = &run.data.split.test;
    let (mut correct, mut total, mut counts) = (0, 0, 0);
    for ex in test {
        let truth = ex.topic_labels.as_deref().unwrap();
        let pred = predict_topics(&run.topic, &ex.source, DecodeConfig::default().max_sentences).unwrap();
        total += truth.len();
        correct += truth.iter().zip(&pred).filter(|(a, b)| a == b).count();
        let eot = run.topic.hyperparams().topic_count as u32 - 1;
        let n_pred = pred.iter().position(|&l| l == eot).unwrap_or(pred.len());
        counts += usize::from(n_pred == ex.sentences.len());
    }
    let acc = correct as f64 / total as f64;
    let count_acc = counts as f64 / test.len() as f64;
    Outcome::new(
        acc >= 0.9 && count_acc >= 0.9,
        format!(
            "{} held-out instances: topic accuracy {:.1}%, sentence count correct {:.1}%",
            test.len(),
            100.0 * acc,
            100.0 * count_acc
        ),
    )
}

pub fn structured_beats_flat(runs: &mut Runs) -> Outcome {
    let decode = DecodeConfig::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let run = runs.get(seed);
        let dev = &run.data.split.valid;
        let flat = mean_rouge1(&run.flat, dev, &run.data.vocab, &decode);
        let topic = mean_rouge1(&run.topic, dev, &run.data.vocab, &decode);
        pass &= topic - flat >= 0.02;
        parts.push(format!("seed {seed}: flat {:.1} vs +T {:.1}", 100.0 * flat, 100.0 * topic));
    }
    Outcome::new(pass, format!("dev ROUGE-1 {}", parts.join("; ")))
}
