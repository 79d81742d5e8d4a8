use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topicsum::metrics::{abstract_metric, copy_metric, rouge_l, rouge_n, Prf};
use topicsum::text::{is_content_word, stem};

use crate::Outcome;

const WORDS: [&str; 10] = ["the", "a", "of", "cat", "cats", "dog", "runs", "running", "blue", "."];

fn f_of(overlap: usize, cand: usize, refr: usize) -> (f64, f64, f64) {
    let p = if cand == 0 { 0.0 } else { overlap as f64 / cand as f64 };
    let r = if refr == 0 { 0.0 } else { overlap as f64 / refr as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

fn count<T: PartialEq>(items: &[T], x: &T) -> usize {
    items.iter().filter(|y| *y == x).count()
}

/// Clipped overlap of two multisets by scanning the distinct items of `a`.
fn clipped<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut seen: Vec<&T> = Vec::new();
    let mut total = 0;
    for x in a {
        if !seen.contains(&x) {
            seen.push(x);
            total += count(a, x).min(count(b, x));
        }
    }
    total
}

fn grams(t: &[String], n: usize) -> Vec<Vec<String>> {
    if t.len() < n { Vec::new() } else { (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect() }
}

fn is_subsequence(sub: &[&String], of: &[String]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|x| it.any(|y| y == *x))
}

/// Longest common subsequence by enumerating every subsequence of `a`.
fn lcs_brute(a: &[String], b: &[String]) -> usize {
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let sub: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
            is_subsequence(&sub, b).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

fn content_f(g: &[String], r: &[String], s: &[String], in_source: bool) -> f64 {
    let keep = |t: &[String]| -> Vec<String> {
        t.iter().filter(|w| is_content_word(w) && s.contains(w) == in_source).cloned().collect()
    };
    let (g, r) = (keep(g), keep(r));
    f_of(clipped(&g, &r), g.len(), r.len()).2
}

fn same(p: Prf, o: (f64, f64, f64)) -> bool {
    p.precision.to_bits() == o.0.to_bits() && p.recall.to_bits() == o.1.to_bits() && p.f.to_bits() == o.2.to_bits()
}

fn random_text(rng: &mut ChaCha8Rng) -> Vec<String> {
    let n = rng.random_range(0..=8);
    (0..n).map(|_| WORDS.choose(rng).unwrap().to_string()).collect()
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (c, r, s) = (random_text(&mut rng), random_text(&mut rng), random_text(&mut rng));
        for stemming in [false, true] {
            let prep = |t: &[String]| -> Vec<String> {
                t.iter().map(|w| if stemming { stem(w) } else { w.clone() }).collect()
            };
            let (pc, pr) = (prep(&c), prep(&r));
            for n in [1, 2] {
                let (gc, gr) = (grams(&pc, n), grams(&pr, n));
                let oracle = f_of(clipped(&gc, &gr), gc.len(), gr.len());
                mismatches += usize::from(!same(rouge_n(&c, &r, n, stemming), oracle));
            }
            let oracle = f_of(lcs_brute(&pc, &pr), pc.len(), pr.len());
            mismatches += usize::from(!same(rouge_l(&c, &r, stemming), oracle));
        }
        mismatches += usize::from(abstract_metric(&c, &r, &s).to_bits() != content_f(&c, &r, &s, false).to_bits());
        mismatches += usize::from(copy_metric(&c, &r, &s).to_bits() != content_f(&c, &r, &s, true).to_bits());
    }
    let hand_n = rouge_n(&["a", "b", "c"], &["a", "b", "d"], 1, false).f == 2.0 / 3.0;
    let hand_l = rouge_l(&["a", "c"], &["a", "b", "c"], false).f == 0.8;
    Outcome::new(
        mismatches == 0 && hand_n && hand_l,
        format!("{mismatches} mismatches over 1000 instances; hand examples rouge_n {hand_n}, rouge_l {hand_l}"),
    )
}
