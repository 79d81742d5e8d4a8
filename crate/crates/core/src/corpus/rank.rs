//! Paragraph ranking by pivoted, length-normalized TF-IDF similarity to the title.

use std::collections::{HashMap, HashSet};

/// Slope of the pivoted length normalization.
pub const DEFAULT_PIVOT_SLOPE: f64 = 0.25;

/// Scores every paragraph against the title.
///
/// `score(p) = Σ_{w ∈ title} (1 + ln(1 + ln tf)) / ((1 − s) + s·|p|/avg|p|) · ln((N + 1) / df)`,
/// summed over distinct title words occurring in `p`. Document frequencies
/// and the average length come from the paragraph set itself.
pub fn paragraph_scores<S: AsRef<str>>(title: &[S], paragraphs: &[Vec<S>], slope: f64) -> Vec<f64> {
    let n = paragraphs.len();
    if n == 0 {
        return Vec::new();
    }
    let terms: HashSet<&str> = title.iter().map(AsRef::as_ref).collect();
    if terms.is_empty() {
        return vec![0.0; n];
    }
    let avg_len = paragraphs.iter().map(Vec::len).sum::<usize>() as f64 / n as f64;

    let tfs: Vec<HashMap<&str, usize>> = paragraphs
        .iter()
        .map(|p| {
            let mut tf = HashMap::new();
            for w in p.iter().map(AsRef::as_ref).filter(|w| terms.contains(w)) {
                *tf.entry(w).or_insert(0) += 1;
            }
            tf
        })
        .collect();
    let mut df: HashMap<&str, usize> = HashMap::new();
    for tf in &tfs {
        for &w in tf.keys() {
            *df.entry(w).or_insert(0) += 1;
        }
    }

    paragraphs
        .iter()
        .zip(&tfs)
        .map(|(p, tf)| {
            let norm = if avg_len > 0.0 {
                (1.0 - slope) + slope * p.len() as f64 / avg_len
            } else {
                1.0
            };
            tf.iter()
                .map(|(w, &count)| {
                    let damped = 1.0 + (1.0 + (count as f64).ln()).ln();
                    let idf = ((n as f64 + 1.0) / df[w] as f64).ln();
                    damped / norm * idf
                })
                .sum()
        })
        .collect()
}

/// Paragraph indices ordered by descending score; ties keep input order.
pub fn rank_paragraphs<S: AsRef<str>>(title: &[S], paragraphs: &[Vec<S>], slope: f64) -> Vec<usize> {
    let scores = paragraph_scores(title, paragraphs, slope);
    let mut order: Vec<usize> = (0..paragraphs.len()).collect();
    // sort_by is stable, so equal scores stay in index order
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}
