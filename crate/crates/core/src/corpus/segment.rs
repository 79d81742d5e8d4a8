//! Rule-based sentence segmentation of lead sections.

use crate::text::tokenize;

const TERMINALS: &[&str] = &[".", "!", "?"];

// Tokens after which a period does not end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "inc", "ltd", "co", "corp", "vs", "etc",
    "no", "fig", "approx", "gen", "col", "lt", "mt", "ft", "jan", "feb", "mar", "apr", "jun",
    "jul", "aug", "sep", "sept", "oct", "nov", "dec",
];

/// Splits a token stream into sentences at terminal punctuation.
///
/// A period directly after a listed abbreviation does not end the sentence.
/// Closing quotes and brackets that follow the terminal stay with it.
pub fn split_sentences(tokens: &[String]) -> Vec<Vec<String>> {
    let mut sentences = Vec::new();
    let mut cur: Vec<String> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let tok = &tokens[i];
        cur.push(tok.clone());
        let is_terminal = TERMINALS.contains(&tok.as_str());
        let after_abbrev = tok == "."
            && cur.len() >= 2
            && ABBREVIATIONS.contains(&cur[cur.len() - 2].as_str());
        if is_terminal && !after_abbrev {
            while let Some(next) = tokens.get(i + 1) {
                if matches!(next.as_str(), "\"" | "'" | ")" | "]") {
                    cur.push(next.clone());
                    i += 1;
                } else {
                    break;
                }
            }
            sentences.push(std::mem::take(&mut cur));
        }
        i += 1;
    }
    if !cur.is_empty() {
        sentences.push(cur);
    }
    sentences
}

/// Hard-splits every sentence longer than `max_len` into consecutive chunks.
pub fn split_long(sentences: Vec<Vec<String>>, max_len: usize) -> Vec<Vec<String>> {
    assert!(max_len > 0);
    let mut out = Vec::with_capacity(sentences.len());
    for s in sentences {
        if s.len() <= max_len {
            out.push(s);
        } else {
            out.extend(s.chunks(max_len).map(<[String]>::to_vec));
        }
    }
    out
}

/// Tokenizes a lead section and returns its sentences, none longer than `max_len`.
pub fn segment_summary(lead: &str, max_len: usize) -> Vec<Vec<String>> {
    split_long(split_sentences(&tokenize(lead)), max_len)
}
