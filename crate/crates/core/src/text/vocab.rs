use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const UNK: usize = 2;
const SPECIALS: [&str; 3] = ["[PAD]", "[CLS]", "[UNK]"];

/// Lower-cased alphanumeric words.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase)
}

/// Word-level vocabulary with contiguous ids; ids 0..3 are PAD, CLS, UNK.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new())
    }
}

impl Vocabulary {
    /// Words seen at least `min_freq` times, in first-appearance order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut order = Vec::new();
        for t in texts {
            for w in words(t) {
                let c = counts.entry(w.clone()).or_insert(0);
                if *c == 0 {
                    order.push(w);
                }
                *c += 1;
            }
        }
        Self::from_tokens(order.into_iter().filter(|w| counts[w] >= min_freq.max(1)))
    }

    /// Specials followed by `tokens` (duplicates and special names skipped).
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut v = Self { tokens: Vec::new(), ids: HashMap::new() };
        for t in SPECIALS.iter().map(|s| s.to_string()).chain(tokens.into_iter().map(Into::into)) {
            if !v.ids.contains_key(&t) {
                v.ids.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == SPECIALS.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let tokens: Vec<&str> = text.lines().collect();
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(invalid(format!("{}: vocabulary must start with {:?}", path.display(), SPECIALS)));
        }
        let v = Self::from_tokens(tokens[SPECIALS.len()..].iter().copied());
        if v.len() != tokens.len() {
            return Err(invalid(format!("{}: duplicate tokens in vocabulary", path.display())));
        }
        Ok(v)
    }
}

/// CLS-prefixed token ids padded or truncated to a fixed length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    /// Ids with padding removed. Attention masks PAD keys, and pooling reads
    /// only CLS, so dropping PAD positions is equivalent to masking them.
    pub fn active(&self) -> Vec<usize> {
        self.ids.iter().copied().filter(|&i| i != PAD).collect()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    assert!(max_len >= 2, "max_len must leave room for CLS and one token");
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(words(text).take(max_len - 1).map(|w| vocab.id(&w)));
    ids.resize(max_len, PAD);
    TokenSequence { ids }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        let v = Vocabulary::build(["salt and sugar"], 1);
        let salt = v.id("salt");
        assert_eq!(tokenize("", &v, 4).ids, [CLS, PAD, PAD, PAD]);
        assert_eq!(tokenize("salt salt", &v, 5).ids, [CLS, salt, salt, PAD, PAD]);
        assert_eq!(tokenize("pepper", &v, 3).ids, [CLS, UNK, PAD]);
        let long = "salt ".repeat(1000);
        assert_eq!(tokenize(&long, &v, 16).len(), 16);
    }

    #[test]
    fn min_frequency_and_order() {
        let v = Vocabulary::build(["b a b", "c a"], 2);
        assert_eq!(&v.tokens()[3..], ["b", "a"]);
    }

    #[test]
    fn file_round_trip() {
        let v = Vocabulary::build(["tomato soup", "apple pie"], 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        let w = Vocabulary::load(&p).unwrap();
        assert_eq!(v, w);
        assert_eq!(v.hash(), w.hash());
    }
}
