//! Rule-labelled toy corpora for smoke tests and demos.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::{build_example, LabeledExample};
use crate::distill::{Document, STOPWORDS};

pub const CONTENT_WORDS: &[&str] = &[
    "river", "budget", "council", "engine", "harbor", "meadow", "pilot", "signal", "ticket", "garden",
    "planet", "copper", "lantern", "market", "orchard", "parcel", "quartz", "saddle", "timber", "velvet",
    "walnut", "zephyr", "canyon", "dragon", "falcon", "glacier", "island", "jungle", "kettle", "marble",
];

/// Instruction words for [`task_awareness_corpus`].
pub const PARITY_INSTRUCTIONS: [&str; 2] = ["A", "B"];

fn sentence(rng: &mut ChaCha8Rng, len: usize, content_share: f64) -> Vec<&'static str> {
    (0..len)
        .map(|_| {
            if rng.gen_bool(content_share) {
                *CONTENT_WORDS.choose(rng).unwrap()
            } else {
                *STOPWORDS.choose(rng).unwrap()
            }
        })
        .collect()
}

/// Instruction-free examples labelled 1 for content words, 0 for stopwords.
pub fn stopword_corpus(n: usize, min_len: usize, max_len: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(min_len..=max_len);
            let words = sentence(&mut rng, len, 0.5);
            let labels = words.iter().map(|w| u8::from(!STOPWORDS.contains(w))).collect();
            build_example("", &words.join(" "), labels).unwrap()
        })
        .collect()
}

/// Examples whose labels depend on the instruction: `A` keeps content
/// words at odd (0-based) positions, `B` keeps those at even positions.
/// Stopwords are always dropped. About 80% of words are content words, so
/// a model that ignores the instruction tops out near 60% accuracy.
pub fn task_awareness_corpus(n: usize, len: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let which = rng.gen_range(0..2usize);
            let words = sentence(&mut rng, len, 0.8);
            let labels = words
                .iter()
                .enumerate()
                .map(|(i, w)| u8::from(!STOPWORDS.contains(w) && i % 2 == 1 - which))
                .collect();
            build_example(PARITY_INSTRUCTIONS[which], &words.join(" "), labels).unwrap()
        })
        .collect()
}

/// Multi-sentence documents with a question about one of the sentences.
pub fn documents(n: usize, sentences: usize, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|d| {
            let sents: Vec<Vec<&str>> = (0..sentences)
                .map(|_| {
                    let len = rng.gen_range(6..=12);
                    sentence(&mut rng, len, 0.5)
                })
                .collect();
            let text = sents
                .iter()
                .map(|s| format!("{}.", s.join(" ")))
                .collect::<Vec<_>>()
                .join(" ");
            let target = &sents[rng.gen_range(0..sentences)];
            let topic = target
                .iter()
                .find(|w| !STOPWORDS.contains(w))
                .copied()
                .unwrap_or(CONTENT_WORDS[0]);
            Document {
                doc_id: format!("doc{d:04}"),
                text,
                instruction: format!("What about the {topic}?"),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpora_are_deterministic_and_well_formed() {
        assert_eq!(stopword_corpus(5, 3, 8, 1), stopword_corpus(5, 3, 8, 1));
        for e in task_awareness_corpus(50, 10, 2) {
            assert_eq!(e.n(), 10);
            assert_eq!(e.boundary_m, 1);
            let keep_parity = if e.instruction == "A" { 1 } else { 0 };
            for (i, &l) in e.labels.iter().enumerate() {
                if l == 1 {
                    assert_eq!(i % 2, keep_parity);
                }
            }
        }
        let docs = documents(3, 4, 3);
        assert_eq!(docs.len(), 3);
        assert!(docs.iter().all(|d| d.instruction.starts_with("What about")));
    }
}
