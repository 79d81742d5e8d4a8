//! ROUGE-N, ROUGE-L and the abstraction (A) and copy (C) content metrics.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::text::{is_content_word, stem};

/// Precision, recall and F1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl Prf {
    /// From an overlap count and the two totals; zero wherever a total is zero.
    pub fn from_counts(overlap: usize, candidate: usize, reference: usize) -> Self {
        let ratio = |n: usize| if n == 0 { 0.0 } else { overlap as f64 / n as f64 };
        let (precision, recall) = (ratio(candidate), ratio(reference));
        let f = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f }
    }

    fn add(&mut self, other: &Prf) {
        self.precision += other.precision;
        self.recall += other.recall;
        self.f += other.f;
    }

    fn div(&mut self, n: f64) {
        self.precision /= n;
        self.recall /= n;
        self.f /= n;
    }
}

fn prepare<S: AsRef<str>>(tokens: &[S], stemming: bool) -> Vec<String> {
    tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            if stemming {
                stem(t)
            } else {
                t.to_string()
            }
        })
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap between candidate and reference.
pub fn rouge_n<S: AsRef<str>, T: AsRef<str>>(candidate: &[S], reference: &[T], n: usize, stemming: bool) -> Prf {
    let cand = prepare(candidate, stemming);
    let refr = prepare(reference, stemming);
    let cc = ngram_counts(&cand, n);
    let rc = ngram_counts(&refr, n);
    let overlap = cc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum();
    Prf::from_counts(overlap, cc.values().sum(), rc.values().sum())
}

/// Longest common subsequence length.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// LCS-based precision, recall and F.
pub fn rouge_l<S: AsRef<str>, T: AsRef<str>>(candidate: &[S], reference: &[T], stemming: bool) -> Prf {
    let cand = prepare(candidate, stemming);
    let refr = prepare(reference, stemming);
    Prf::from_counts(lcs_len(&cand, &refr), cand.len(), refr.len())
}

fn multiset<'a>(tokens: impl Iterator<Item = &'a str>) -> HashMap<&'a str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t).or_insert(0) += 1;
    }
    m
}

/// Clipped unigram F over two multisets; zero when either is empty.
fn unigram_f(a: &HashMap<&str, usize>, b: &HashMap<&str, usize>) -> f64 {
    let overlap = a.iter().map(|(w, &c)| c.min(b.get(w).copied().unwrap_or(0))).sum();
    Prf::from_counts(overlap, a.values().sum(), b.values().sum()).f
}

fn content_filtered<'a, S: AsRef<str>>(
    tokens: &'a [S],
    source: &HashSet<&str>,
    keep_source: bool,
) -> HashMap<&'a str, usize> {
    multiset(
        tokens
            .iter()
            .map(AsRef::as_ref)
            .filter(|t| is_content_word(t) && source.contains(t) == keep_source),
    )
}

/// Unigram F between generated and reference content words that do not
/// occur in the source.
pub fn abstract_metric<S: AsRef<str>, T: AsRef<str>, U: AsRef<str>>(generated: &[S], reference: &[T], source: &[U]) -> f64 {
    let src: HashSet<&str> = source.iter().map(AsRef::as_ref).collect();
    unigram_f(&content_filtered(generated, &src, false), &content_filtered(reference, &src, false))
}

/// Unigram F between generated and reference content words that occur in
/// the source.
pub fn copy_metric<S: AsRef<str>, T: AsRef<str>, U: AsRef<str>>(generated: &[S], reference: &[T], source: &[U]) -> f64 {
    let src: HashSet<&str> = source.iter().map(AsRef::as_ref).collect();
    unigram_f(&content_filtered(generated, &src, true), &content_filtered(reference, &src, true))
}

/// Tokens ROUGE is computed over: words only, punctuation and markup dropped.
pub fn rouge_tokens<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens
        .iter()
        .map(|t| t.as_ref().to_lowercase())
        .filter(|t| t.chars().any(char::is_alphanumeric) && !(t.starts_with('<') && t.ends_with('>')))
        .collect()
}

/// Scores of one system summary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceScores {
    pub id: String,
    pub r1: Prf,
    pub r2: Prf,
    pub rl: Prf,
    #[serde(rename = "A")]
    pub abstract_f: f64,
    #[serde(rename = "C")]
    pub copy_f: f64,
    pub empty: bool,
}

/// Corpus means in the column order of a results table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanScores {
    #[serde(rename = "R1")]
    pub r1: Prf,
    #[serde(rename = "R2")]
    pub r2: Prf,
    #[serde(rename = "RL")]
    pub rl: Prf,
    #[serde(rename = "A")]
    pub abstract_f: f64,
    #[serde(rename = "C")]
    pub copy_f: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub instances: usize,
    pub empty_outputs: usize,
    pub stemming: bool,
    pub mean: MeanScores,
    pub per_instance: Vec<InstanceScores>,
}

/// One system output with its reference and source, all tokenized.
pub struct EvalItem<'a> {
    pub id: &'a str,
    pub system: &'a [String],
    pub reference: &'a [String],
    pub source: &'a [String],
}

pub fn score_instance(item: &EvalItem<'_>, stemming: bool) -> InstanceScores {
    let sys = rouge_tokens(item.system);
    let refr = rouge_tokens(item.reference);
    InstanceScores {
        id: item.id.to_string(),
        r1: rouge_n(&sys, &refr, 1, stemming),
        r2: rouge_n(&sys, &refr, 2, stemming),
        rl: rouge_l(&sys, &refr, stemming),
        abstract_f: abstract_metric(item.system, item.reference, item.source),
        copy_f: copy_metric(item.system, item.reference, item.source),
        empty: sys.is_empty(),
    }
}

/// Per-instance scores and their arithmetic means.
pub fn evaluate(items: &[EvalItem<'_>], stemming: bool) -> MetricReport {
    let per_instance: Vec<InstanceScores> = items.iter().map(|it| score_instance(it, stemming)).collect();
    let mut mean = MeanScores::default();
    for s in &per_instance {
        mean.r1.add(&s.r1);
        mean.r2.add(&s.r2);
        mean.rl.add(&s.rl);
        mean.abstract_f += s.abstract_f;
        mean.copy_f += s.copy_f;
    }
    if !per_instance.is_empty() {
        let n = per_instance.len() as f64;
        mean.r1.div(n);
        mean.r2.div(n);
        mean.rl.div(n);
        mean.abstract_f /= n;
        mean.copy_f /= n;
    }
    MetricReport {
        instances: per_instance.len(),
        empty_outputs: per_instance.iter().filter(|s| s.empty).count(),
        stemming,
        mean,
        per_instance,
    }
}
