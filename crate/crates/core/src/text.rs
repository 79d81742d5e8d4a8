//! Tokenization, stopwords and stemming shared by every stage.

use std::collections::HashSet;
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};

const STOPWORDS: &str = include_str!("../data/stopwords.txt");

/// Lowercases and splits `text` into word and punctuation tokens.
///
/// Alphanumeric runs form words; every other non-space character is a token
/// of its own, except `.` or `,` between two digits, which stays inside the
/// number (`3.5`, `1,000`).
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            cur.push(c);
            continue;
        }
        let numeric_sep = (c == '.' || c == ',')
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit())
            && cur.chars().next().is_some_and(|f| f.is_ascii_digit());
        if numeric_sep {
            cur.push(c);
            continue;
        }
        if !cur.is_empty() {
            tokens.push(std::mem::take(&mut cur));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_string());
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

fn stopword_set() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS.lines().map(str::trim).filter(|l| !l.is_empty()).collect())
}

pub fn is_stopword(token: &str) -> bool {
    stopword_set().contains(token)
}

/// A content word is a non-stopword containing at least one alphanumeric character.
pub fn is_content_word(token: &str) -> bool {
    token.chars().any(char::is_alphanumeric) && !is_stopword(token)
}

/// English (Porter2) stem of a lowercase token.
pub fn stem(token: &str) -> String {
    thread_local! {
        static STEMMER: Stemmer = Stemmer::create(Algorithm::English);
    }
    STEMMER.with(|s| s.stem(token).into_owned())
}

/// Stemmed content words of a token sequence, in order.
pub fn content_stems<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| is_content_word(t))
        .map(stem)
        .collect()
}
