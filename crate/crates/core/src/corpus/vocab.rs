use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const SOS: u32 = 2;
/// End of sentence.
pub const EOS: u32 = 3;
/// End of document (summary).
pub const EOD: u32 = 4;
/// Paragraph separator in the source.
pub const EOP: u32 = 5;
/// Separator after the title in the source.
pub const EOT: u32 = 6;

pub const SPECIALS: [&str; 7] = ["<pad>", "<unk>", "<s>", "</s>", "<eod>", "<eop>", "<eot>"];
pub const NUM_SPECIALS: u32 = SPECIALS.len() as u32;

pub const DEFAULT_VOCAB_SIZE: usize = 50_000;

/// Token ↔ id mapping. Specials occupy ids `0..7`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from non-special tokens, in id order.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Result<Self> {
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> =
            all.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        for tok in tokens {
            if index.contains_key(&tok) {
                return Err(Error::InvalidInput(format!("duplicate vocabulary entry {tok:?}")));
            }
            index.insert(tok.clone(), all.len() as u32);
            all.push(tok);
        }
        Ok(Vocab { tokens: all, index })
    }

    /// The `size` most frequent tokens, ties broken lexicographically.
    ///
    /// Special tokens are always present and do not count against `size`.
    pub fn build<'a, I, S>(sequences: I, size: usize) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for seq in sequences {
            for tok in seq {
                let tok = tok.as_ref();
                if !SPECIALS.contains(&tok) {
                    *counts.entry(tok).or_insert(0) += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(size);
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()))
            .expect("counted tokens are distinct")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(SPECIALS[UNK as usize], String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Non-special tokens in id order.
    pub fn regular_tokens(&self) -> &[String] {
        &self.tokens[NUM_SPECIALS as usize..]
    }

    /// SHA-256 over the full token list, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// One regular token per line; line `n` (0-based) has id `n + 7`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in self.regular_tokens() {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("invalid vocabulary token {line:?}"),
                });
            }
            tokens.push(line.to_string());
        }
        Self::from_tokens(tokens)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}
