use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::align::LabeledExample;
use crate::text::normalize_word;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const SEP: u32 = 2;
const RESERVED: [&str; 3] = ["<pad>", "<unk>", "<sep>"];

/// Normalized word to id. Ids 0..3 are reserved for PAD, UNK and SEP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    ids: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let ids = words
            .iter()
            .enumerate()
            .skip(RESERVED.len())
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Self { words, ids }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    /// Words ordered by descending frequency, ties broken lexicographically.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for w in words {
            let n = normalize_word(w);
            if !n.is_empty() {
                *counts.entry(n).or_default() += 1;
            }
        }
        let mut entries: Vec<(String, usize)> = counts.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(entries.into_iter().map(|(w, _)| w));
        Self::from(all)
    }

    pub fn size(&self) -> usize {
        self.words.len()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.ids.get(&normalize_word(word)).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot build a vocabulary from an empty dataset")]
pub struct EmptyDataset;

/// Vocabulary over instruction and original words of every example.
pub fn build_vocab(dataset: &[LabeledExample]) -> Result<Vocab, EmptyDataset> {
    if dataset.is_empty() {
        return Err(EmptyDataset);
    }
    Ok(Vocab::from_words(dataset.iter().flat_map(|e| {
        e.instruction_words
            .iter()
            .chain(&e.original_words)
            .map(String::as_str)
    })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::build_example;

    #[test]
    fn reserved_plus_words() {
        let ds = vec![build_example("", "a b a", vec![1, 0, 1]).unwrap()];
        let v = build_vocab(&ds).unwrap();
        assert_eq!(v.size(), 5);
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("B."), 4);
        assert_eq!(v.id("zzz"), UNK);
        assert_eq!(v.word(SEP), Some("<sep>"));
        assert_eq!(build_vocab(&ds).unwrap(), v);
        assert_eq!(build_vocab(&[]), Err(EmptyDataset));
    }

    #[test]
    fn order_is_frequency_then_lexicographic() {
        let v = Vocab::from_words(["b", "c", "a", "c"]);
        assert_eq!(&v.words()[3..], &["c", "a", "b"]);
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocab::from_words(["x", "y"]);
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("y"), v.id("y"));
    }
}
