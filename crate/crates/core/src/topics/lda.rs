use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Document-topic concentration; small values favour one topic per sentence.
pub const DEFAULT_ALPHA: f64 = 0.001;
pub const DEFAULT_ETA: f64 = 0.01;
pub const DEFAULT_SWEEPS: usize = 200;
pub const DEFAULT_SEED: u64 = 100;
pub const FOLD_IN_SWEEPS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub alpha: f64,
    pub eta: f64,
    pub sweeps: usize,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            alpha: DEFAULT_ALPHA,
            eta: DEFAULT_ETA,
            sweeps: DEFAULT_SWEEPS,
            seed: DEFAULT_SEED,
        }
    }
}

/// A fitted topic model over sentence-documents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub format_version: u32,
    pub k: usize,
    pub alpha: f64,
    pub eta: f64,
    pub seed: u64,
    /// Topic assigned to sentences without known content words: the topic
    /// with the most training tokens.
    pub fallback_topic: u32,
    pub vocab: Vec<String>,
    /// `k` rows of topic-word probabilities over `vocab`.
    pub phi: Vec<Vec<f64>>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TopicModel {
    pub const FORMAT_VERSION: u32 = 1;

    fn with_index(mut self) -> Self {
        self.index = self.vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        self
    }

    pub fn word_id(&self, w: &str) -> Option<usize> {
        self.index.get(w).copied()
    }

    /// The label that closes every topic sequence.
    pub fn eot_label(&self) -> u32 {
        self.k as u32
    }

    /// Highest-probability words of `topic`, ties broken alphabetically.
    pub fn top_words(&self, topic: usize, n: usize) -> Vec<&str> {
        let mut ids: Vec<usize> = (0..self.vocab.len()).collect();
        let row = &self.phi[topic];
        ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then_with(|| self.vocab[a].cmp(&self.vocab[b])));
        ids.into_iter().take(n).map(|i| self.vocab[i].as_str()).collect()
    }

    /// One line per topic: `#k: w1, w2, ...`.
    pub fn summary(&self, n: usize) -> String {
        (0..self.k)
            .map(|t| format!("#{t}: {}\n", self.top_words(t, n).join(", ")))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("topic model serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let model: TopicModel = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if model.phi.len() != model.k || model.phi.iter().any(|r| r.len() != model.vocab.len()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "phi shape does not match k × |vocab|".into(),
            });
        }
        Ok(model.with_index())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&io::read_to_string(path)?, path)
    }
}

/// Fits LDA with collapsed Gibbs sampling, treating each entry of `docs` as a document.
pub fn train_lda<S: AsRef<str>>(docs: &[Vec<S>], k: usize, cfg: &LdaConfig) -> Result<TopicModel> {
    if k == 0 {
        return Err(Error::InvalidInput("topic count must be positive".into()));
    }
    if cfg.alpha <= 0.0 || cfg.eta <= 0.0 {
        return Err(Error::InvalidInput("alpha and eta must be positive".into()));
    }
    let vocab: Vec<String> = docs
        .iter()
        .flatten()
        .map(|w| w.as_ref().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if vocab.len() < k {
        return Err(Error::InvalidInput(format!(
            "vocabulary of {} words is smaller than {k} topics",
            vocab.len()
        )));
    }
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let words: Vec<Vec<usize>> = docs
        .iter()
        .map(|d| d.iter().map(|w| index[w.as_ref()]).collect::<Vec<_>>())
        .filter(|d: &Vec<usize>| !d.is_empty())
        .collect();

    let v = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut n_dk = vec![vec![0usize; k]; words.len()];
    let mut n_kw = vec![vec![0usize; v]; k];
    let mut n_k = vec![0usize; k];
    let mut z: Vec<Vec<usize>> = words
        .iter()
        .enumerate()
        .map(|(d, doc)| {
            doc.iter()
                .map(|&w| {
                    let t = rng.random_range(0..k);
                    n_dk[d][t] += 1;
                    n_kw[t][w] += 1;
                    n_k[t] += 1;
                    t
                })
                .collect()
        })
        .collect();

    let v_eta = v as f64 * cfg.eta;
    let mut p = vec![0.0; k];
    for sweep in 0..cfg.sweeps {
        let alpha = annealed_alpha(cfg.alpha, sweep, cfg.sweeps);
        for (d, doc) in words.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let old = z[d][i];
                n_dk[d][old] -= 1;
                n_kw[old][w] -= 1;
                n_k[old] -= 1;
                for t in 0..k {
                    p[t] = (n_dk[d][t] as f64 + alpha) * (n_kw[t][w] as f64 + cfg.eta)
                        / (n_k[t] as f64 + v_eta);
                }
                let new = sample(&p, &mut rng);
                z[d][i] = new;
                n_dk[d][new] += 1;
                n_kw[new][w] += 1;
                n_k[new] += 1;
            }
        }
    }

    let phi = (0..k)
        .map(|t| {
            let denom = n_k[t] as f64 + v_eta;
            n_kw[t].iter().map(|&c| (c as f64 + cfg.eta) / denom).collect()
        })
        .collect();
    let fallback_topic = argmax_usize(&n_k) as u32;
    Ok(TopicModel {
        format_version: TopicModel::FORMAT_VERSION,
        k,
        alpha: cfg.alpha,
        eta: cfg.eta,
        seed: cfg.seed,
        fallback_topic,
        vocab,
        phi,
        index: HashMap::new(),
    }
    .with_index())
}

/// Document-topic concentration used in a given sweep.
///
/// With a very sparse prior the token-level chain barely moves once a
/// sentence is committed to a topic, so the first half of the sweeps
/// decays geometrically from `ANNEAL_START` down to the target value.
fn annealed_alpha(target: f64, sweep: usize, sweeps: usize) -> f64 {
    const ANNEAL_START: f64 = 1.0;
    let burn = sweeps / 2;
    if target >= ANNEAL_START || sweep >= burn {
        return target;
    }
    let frac = sweep as f64 / burn as f64;
    ANNEAL_START * (target / ANNEAL_START).powf(frac)
}

fn sample(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn argmax_usize(xs: &[usize]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Per-sentence topic proportions by fold-in Gibbs sampling against fixed `phi`.
///
/// Words are sorted first and the sampler is seeded from the model, so the
/// result depends only on the bag of words. Returns `None` when no word is
/// in the model vocabulary.
pub fn infer_theta<S: AsRef<str>>(model: &TopicModel, sentence: &[S], sweeps: usize) -> Option<Vec<f64>> {
    let mut ids: Vec<usize> = sentence.iter().filter_map(|w| model.word_id(w.as_ref())).collect();
    if ids.is_empty() {
        return None;
    }
    ids.sort_unstable();
    let k = model.k;
    let mut n_k = vec![0usize; k];
    let mut z: Vec<usize> = ids
        .iter()
        .map(|&w| {
            let col: Vec<f64> = (0..k).map(|t| model.phi[t][w]).collect();
            let t = argmax(&col);
            n_k[t] += 1;
            t
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let mut p = vec![0.0; k];
    for _ in 0..sweeps {
        for (i, &w) in ids.iter().enumerate() {
            n_k[z[i]] -= 1;
            for t in 0..k {
                p[t] = (n_k[t] as f64 + model.alpha) * model.phi[t][w];
            }
            z[i] = sample(&p, &mut rng);
            n_k[z[i]] += 1;
        }
    }
    let denom = ids.len() as f64 + k as f64 * model.alpha;
    Some(n_k.iter().map(|&c| (c as f64 + model.alpha) / denom).collect())
}
