//! Word-level vocabulary with a hashed fallback band for unseen words.
//!
//! Id layout: `0` is padding, `[UNK_BASE, UNK_BASE + hash_band)` holds hashed
//! out-of-vocabulary words, and known words follow in sorted order.

use std::collections::{BTreeMap, HashMap};

pub const PAD_ID: u32 = 0;
pub const UNK_BASE: u32 = 1;
pub const DEFAULT_HASH_BAND: u32 = 512;
pub const DEFAULT_MIN_FREQ: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
    hash_band: u32,
}

impl Vocab {
    /// Keeps words seen at least `min_freq` times across `texts`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize, hash_band: u32) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            for word in split_words(text) {
                *counts.entry(word).or_default() += 1;
            }
        }
        let words = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_freq)
            .map(|(w, _)| w)
            .collect();
        Self::from_words(words, hash_band)
    }

    /// Rebuilds a vocabulary from its sorted word list.
    pub fn from_words(words: Vec<String>, hash_band: u32) -> Self {
        assert!(hash_band > 0, "hash band must be non-empty");
        let base = UNK_BASE + hash_band;
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), base + i as u32))
            .collect();
        Vocab {
            words,
            index,
            hash_band,
        }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn hash_band(&self) -> u32 {
        self.hash_band
    }

    pub fn size(&self) -> usize {
        (UNK_BASE + self.hash_band) as usize + self.words.len()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index
            .get(word)
            .copied()
            .unwrap_or_else(|| UNK_BASE + (trigram_hash(word) % self.hash_band as u64) as u32)
    }

    pub fn is_known(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }
}

/// Lowercases and splits into alphanumeric runs; every other non-space
/// character stands alone.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            current.push(c);
            continue;
        }
        if !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

pub fn tokenize(text: &str, vocab: &Vocab) -> Vec<u32> {
    split_words(text).iter().map(|w| vocab.id(w)).collect()
}

/// FNV-1a over the character trigrams of `^word$`.
fn trigram_hash(word: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let chars: Vec<char> = std::iter::once('^')
        .chain(word.chars())
        .chain(std::iter::once('$'))
        .collect();
    let mut hash = OFFSET;
    for gram in chars.windows(3.min(chars.len())) {
        for c in gram {
            for b in (*c as u32).to_le_bytes() {
                hash ^= b as u64;
                hash = hash.wrapping_mul(PRIME);
            }
        }
        hash ^= 0xff;
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::build(["Bath Mat bath mat price", "total total"], 2, 64)
    }

    #[test]
    fn known_words_map_to_their_ids() {
        let v = vocab();
        assert_eq!(v.words(), ["bath", "mat", "total"]);
        assert_eq!(tokenize("Bath Mat", &v), vec![v.id("bath"), v.id("mat")]);
        assert_eq!(v.id("bath"), UNK_BASE + 64);
        assert_eq!(v.size(), 1 + 64 + 3);
    }

    #[test]
    fn unseen_words_hash_into_the_band() {
        let v = vocab();
        let ids = tokenize("zebra zebra", &v);
        assert_eq!(ids[0], ids[1]);
        assert!((UNK_BASE..UNK_BASE + 64).contains(&ids[0]));
        assert!(!v.is_known("price"));
    }

    #[test]
    fn punctuation_splits_words() {
        assert_eq!(split_words("$13.99"), ["$", "13", ".", "99"]);
        assert_eq!(
            split_words("www.Example.com"),
            ["www", ".", "example", ".", "com"]
        );
        assert_eq!(split_words("  Ship-to:  "), ["ship", "-", "to", ":"]);
    }
}
