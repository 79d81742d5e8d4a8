//! NPMI topic coherence with boolean sliding-window co-occurrence.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::lda::TopicModel;

pub const DEFAULT_TOP_N: usize = 10;
pub const DEFAULT_WINDOW: usize = 10;
const EPSILON: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    pub per_topic: Vec<f64>,
    pub mean: f64,
}

/// Window-level occurrence counts of a fixed word set.
struct WindowCounts<'a> {
    windows: usize,
    single: HashMap<&'a str, usize>,
    pair: HashMap<(&'a str, &'a str), usize>,
}

fn count_windows<'a, S: AsRef<str>>(words: &HashSet<&'a str>, docs: &[Vec<S>], window: usize) -> WindowCounts<'a> {
    let mut counts = WindowCounts {
        windows: 0,
        single: HashMap::new(),
        pair: HashMap::new(),
    };
    let mut add = |slice: &[S]| {
        counts.windows += 1;
        let mut present: Vec<&'a str> = slice
            .iter()
            .filter_map(|w| words.get(w.as_ref()).copied())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        present.sort_unstable();
        for (i, &a) in present.iter().enumerate() {
            *counts.single.entry(a).or_insert(0) += 1;
            for &b in &present[i + 1..] {
                *counts.pair.entry((a, b)).or_insert(0) += 1;
            }
        }
    };
    for doc in docs.iter().filter(|d| !d.is_empty()) {
        if doc.len() <= window {
            add(doc);
        } else {
            for start in 0..=doc.len() - window {
                add(&doc[start..start + window]);
            }
        }
    }
    counts
}

fn npmi(counts: &WindowCounts<'_>, a: &str, b: &str) -> f64 {
    let w = counts.windows as f64;
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    let p_a = counts.single.get(a).copied().unwrap_or(0) as f64 / w;
    let p_b = counts.single.get(b).copied().unwrap_or(0) as f64 / w;
    if p_a == 0.0 || p_b == 0.0 {
        return -1.0;
    }
    let p_ab = counts.pair.get(&(a, b)).copied().unwrap_or(0) as f64 / w + EPSILON;
    let denom = -p_ab.ln();
    if denom <= 1e-15 {
        // both words occur in every window
        return 1.0;
    }
    ((p_ab / (p_a * p_b)).ln() / denom).clamp(-1.0, 1.0)
}

/// Mean NPMI over all pairs of `top_words`.
pub fn npmi_coherence<S: AsRef<str>>(top_words: &[&str], docs: &[Vec<S>], window: usize) -> f64 {
    let set: HashSet<&str> = top_words.iter().copied().collect();
    let counts = count_windows(&set, docs, window);
    if counts.windows == 0 || top_words.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, a) in top_words.iter().enumerate() {
        for b in &top_words[i + 1..] {
            total += npmi(&counts, a, b);
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// NPMI coherence of each topic's `top_n` words over `docs`.
pub fn topic_coherence<S: AsRef<str>>(model: &TopicModel, docs: &[Vec<S>], top_n: usize, window: usize) -> Coherence {
    let per_topic: Vec<f64> = (0..model.k)
        .map(|t| npmi_coherence(&model.top_words(t, top_n), docs, window))
        .collect();
    let mean = per_topic.iter().sum::<f64>() / per_topic.len().max(1) as f64;
    Coherence { per_topic, mean }
}
