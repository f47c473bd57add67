//! Word segmentation, unit counting and sentence-aware chunking.
//!
//! Every length in this crate is a count of whitespace-delimited words.

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

/// A document decomposed into words with byte offsets into the source.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WordSeq {
    pub words: Vec<String>,
    pub offsets: Vec<(usize, usize)>,
    pub source_len: usize,
}

impl WordSeq {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Words joined by single spaces.
    pub fn joined(&self) -> String {
        self.words.join(" ")
    }
}

/// A contiguous run of words cut out of a longer document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub text: String,
    pub unit_count: usize,
    pub ends_with_period: bool,
    /// Set when an oversized sentence had to be cut at the unit limit.
    pub force_split: bool,
    pub span: (usize, usize),
}

/// Splits on Unicode whitespace. Punctuation stays attached to its word.
pub fn split_words(text: &str) -> WordSeq {
    let mut words = Vec::new();
    let mut offsets = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                words.push(text[s..i].to_string());
                offsets.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        words.push(text[s..].to_string());
        offsets.push((s, text.len()));
    }
    WordSeq {
        words,
        offsets,
        source_len: text.len(),
    }
}

pub fn count_units(seq: &WordSeq) -> usize {
    seq.words.len()
}

/// Word count of a raw string.
pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Lowercased form with leading and trailing punctuation removed.
/// Only used for matching; output text always keeps the raw word.
pub fn normalize_word(word: &str) -> String {
    word.trim_matches(is_punctuation).to_lowercase()
}

/// True if the word closes a sentence (`.`, `!` or `?` as its last char).
pub fn ends_sentence(word: &str) -> bool {
    matches!(word.chars().last(), Some('.' | '!' | '?'))
}

/// Greedily packs whole sentences into chunks of at most `max_units` words.
///
/// A sentence longer than `max_units` is cut into `max_units`-sized pieces,
/// each flagged with `force_split`.
///
/// # Panics
///
/// Panics if `max_units` is zero.
pub fn chunk_document(text: &str, max_units: usize) -> Vec<Chunk> {
    assert!(max_units >= 1, "max_units must be at least 1");
    let seq = split_words(text);
    let n = seq.len();

    // sentence ranges over word indices, end exclusive
    let mut sentences = Vec::new();
    let mut begin = 0;
    for (i, w) in seq.words.iter().enumerate() {
        if ends_sentence(w) {
            sentences.push((begin, i + 1));
            begin = i + 1;
        }
    }
    if begin < n {
        sentences.push((begin, n));
    }

    let make = |from: usize, to: usize, force_split: bool| {
        let span = (seq.offsets[from].0, seq.offsets[to - 1].1);
        Chunk {
            text: text[span.0..span.1].to_string(),
            unit_count: to - from,
            ends_with_period: ends_sentence(&seq.words[to - 1]),
            force_split,
            span,
        }
    };

    let mut chunks = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    for (s, e) in sentences {
        let len = e - s;
        if len > max_units {
            if let Some((cs, ce)) = current.take() {
                chunks.push(make(cs, ce, false));
            }
            let mut from = s;
            while from < e {
                let to = (from + max_units).min(e);
                chunks.push(make(from, to, true));
                from = to;
            }
            continue;
        }
        current = match current {
            Some((cs, ce)) if ce - cs + len <= max_units => Some((cs, e)),
            Some((cs, ce)) => {
                chunks.push(make(cs, ce, false));
                Some((s, e))
            }
            None => Some((s, e)),
        };
    }
    if let Some((cs, ce)) = current {
        chunks.push(make(cs, ce, false));
    }
    chunks
}
