use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topicsum::topics::{annotate_sentence, train_lda, LdaConfig, SentenceTopic};

use crate::Outcome;

const K: usize = 3;
const WORDS_PER_TOPIC: usize = 8;

fn word(topic: usize, j: usize) -> String {
    format!("w{topic}x{j}")
}

/// Topic `k` puts weight proportional to `j + 1` on its own word `j`.
fn true_phi(topic: usize) -> Vec<f64> {
    let total: f64 = (1..=WORDS_PER_TOPIC).map(|j| j as f64).sum();
    (0..K * WORDS_PER_TOPIC)
        .map(|i| if i / WORDS_PER_TOPIC == topic { (i % WORDS_PER_TOPIC + 1) as f64 / total } else { 0.0 })
        .collect()
}

fn sample_doc(topic: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let dist = WeightedIndex::new(1..=WORDS_PER_TOPIC).unwrap();
    (0..len).map(|_| word(topic, dist.sample(rng))).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (norm(a) * norm(b))
}

const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let docs: Vec<Vec<String>> = (0..300)
        .map(|_| {
            let (t, len) = (rng.random_range(0..K), rng.random_range(8..=15));
            sample_doc(t, len, &mut rng)
        })
        .collect();
    let model = train_lda(&docs, K, &LdaConfig::default()).unwrap();
    // learned rows laid out over the true word order
    let learned: Vec<Vec<f64>> = (0..K)
        .map(|k| {
            (0..K * WORDS_PER_TOPIC)
                .map(|i| model.word_id(&word(i / WORDS_PER_TOPIC, i % WORDS_PER_TOPIC)).map_or(0.0, |w| model.phi[k][w]))
                .collect()
        })
        .collect();
    let sims: Vec<Vec<f64>> = (0..K).map(|t| learned.iter().map(|l| cosine(&true_phi(t), l)).collect()).collect();
    let perm = PERMUTATIONS
        .iter()
        .max_by(|a, b| {
            let score = |p: &[usize; 3]| (0..K).map(|t| sims[t][p[t]]).sum::<f64>();
            score(a).total_cmp(&score(b))
        })
        .unwrap();
    let min_cos = (0..K).map(|t| sims[t][perm[t]]).fold(f64::INFINITY, f64::min);

    let trials = 300;
    let correct = (0..trials)
        .filter(|_| {
            let (t, len) = (rng.random_range(0..K), rng.random_range(3..=8));
            annotate_sentence(&model, &sample_doc(t, len, &mut rng)) == SentenceTopic::Topic(perm[t] as u32)
        })
        .count();
    let max_dev = model.phi.iter().map(|row| (row.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    Outcome::new(
        min_cos >= 0.9 && correct == trials && max_dev <= 1e-9,
        format!(
            "min aligned cosine {min_cos:.4}; annotation {correct}/{trials}; max |row sum - 1| {max_dev:.1e}"
        ),
    )
}
