//! Word-level label generation from (original, compressed) pairs, and
//! dataset assembly for incremental and joint training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distill::DistilledRecord;
use crate::text::{normalize_word, split_words};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("{labels} labels for {words} original words")]
    LengthMismatch { labels: usize, words: usize },
    #[error("requested {requested} examples from a pool of {available}")]
    InsufficientData { requested: usize, available: usize },
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentDiagnostics {
    pub matched: usize,
    pub unmatched_compressed: usize,
    pub match_rate: f64,
}

/// Greedy in-order alignment.
///
/// A cursor walks the original left to right. Each compressed word claims
/// the first original word at or after the cursor with the same
/// normalized form, and the cursor moves past it. Compressed words with no
/// such match are counted and otherwise ignored.
pub fn label_pair<S: AsRef<str>, C: AsRef<str>>(
    original_words: &[S],
    compressed_words: &[C],
) -> (Vec<u8>, AlignmentDiagnostics) {
    let normalized: Vec<String> = original_words
        .iter()
        .map(|w| normalize_word(w.as_ref()))
        .collect();
    let mut labels = vec![0u8; original_words.len()];
    let mut cursor = 0;
    let mut matched = 0;
    for c in compressed_words {
        let target = normalize_word(c.as_ref());
        if let Some(off) = normalized[cursor..].iter().position(|w| *w == target) {
            labels[cursor + off] = 1;
            cursor += off + 1;
            matched += 1;
        }
    }
    let total = compressed_words.len();
    let match_rate = if total == 0 {
        1.0
    } else {
        matched as f64 / total as f64
    };
    (
        labels,
        AlignmentDiagnostics {
            matched,
            unmatched_compressed: total - matched,
            match_rate,
        },
    )
}

/// Instruction words `x_p`, original words `x_o` and one label per original word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "LabeledRecord", into = "LabeledRecord")]
pub struct LabeledExample {
    pub instruction: String,
    pub instruction_words: Vec<String>,
    pub original_words: Vec<String>,
    pub labels: Vec<u8>,
    pub boundary_m: usize,
}

/// On-disk form: `{"instruction","original_words","labels","boundary_m"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LabeledRecord {
    instruction: String,
    original_words: Vec<String>,
    labels: Vec<u8>,
    boundary_m: usize,
}

impl From<LabeledRecord> for LabeledExample {
    fn from(r: LabeledRecord) -> Self {
        let instruction_words = split_words(&r.instruction).words;
        Self {
            instruction: r.instruction,
            boundary_m: instruction_words.len(),
            instruction_words,
            original_words: r.original_words,
            labels: r.labels,
        }
    }
}

impl From<LabeledExample> for LabeledRecord {
    fn from(e: LabeledExample) -> Self {
        Self {
            instruction: e.instruction,
            original_words: e.original_words,
            labels: e.labels,
            boundary_m: e.boundary_m,
        }
    }
}

impl LabeledExample {
    pub fn n(&self) -> usize {
        self.original_words.len()
    }

    /// Same example with the instruction removed.
    pub fn without_instruction(&self) -> Self {
        Self {
            instruction: String::new(),
            instruction_words: Vec::new(),
            boundary_m: 0,
            ..self.clone()
        }
    }
}

pub fn build_example(
    instruction: &str,
    original: &str,
    labels: Vec<u8>,
) -> Result<LabeledExample, AlignError> {
    let original_words = split_words(original).words;
    if labels.len() != original_words.len() {
        return Err(AlignError::LengthMismatch {
            labels: labels.len(),
            words: original_words.len(),
        });
    }
    let instruction_words = split_words(instruction).words;
    Ok(LabeledExample {
        instruction: instruction.to_string(),
        boundary_m: instruction_words.len(),
        instruction_words,
        original_words,
        labels,
    })
}

/// Labels one distilled pair.
pub fn label_record(
    record: &DistilledRecord,
) -> Result<(LabeledExample, AlignmentDiagnostics), AlignError> {
    let original = split_words(&record.pair.chunk_text).words;
    let compressed = split_words(&record.pair.compressed_text).words;
    let (labels, diag) = label_pair(&original, &compressed);
    Ok((
        build_example(&record.pair.instruction, &record.pair.chunk_text, labels)?,
        diag,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExampleFlag {
    AllZero,
    EmptyOriginal,
    InvalidLabel,
    LengthMismatch,
}

impl ExampleFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExampleFlag::AllZero => "all-zero",
            ExampleFlag::EmptyOriginal => "empty-original",
            ExampleFlag::InvalidLabel => "invalid-label",
            ExampleFlag::LengthMismatch => "length-mismatch",
        }
    }
}

pub fn validate_example(example: &LabeledExample) -> Vec<ExampleFlag> {
    let mut flags = Vec::new();
    if example.original_words.is_empty() {
        flags.push(ExampleFlag::EmptyOriginal);
    }
    if example.labels.len() != example.original_words.len() {
        flags.push(ExampleFlag::LengthMismatch);
    }
    if example.labels.iter().any(|&l| l > 1) {
        flags.push(ExampleFlag::InvalidLabel);
    }
    if !example.labels.is_empty() && example.labels.iter().all(|&l| l == 0) {
        flags.push(ExampleFlag::AllZero);
    }
    flags
}

/// True when the example can be used for training.
pub fn is_trainable(example: &LabeledExample) -> bool {
    validate_example(example).is_empty()
}

/// Fixed-size mixture: `round(alpha * total)` examples from `task_aware`,
/// the rest from `task_agnostic`, both sampled without replacement and the
/// union shuffled. Deterministic for a given seed.
pub fn mix_datasets<T: Clone>(
    task_aware: &[T],
    task_agnostic: &[T],
    alpha: f64,
    total: usize,
    seed: u64,
) -> Result<Vec<T>, AlignError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AlignError::InvalidAlpha(alpha));
    }
    let n_aware = ((alpha * total as f64) + 0.5).floor() as usize;
    let n_aware = n_aware.min(total);
    let n_agnostic = total - n_aware;
    for (requested, available) in [
        (n_aware, task_aware.len()),
        (n_agnostic, task_agnostic.len()),
    ] {
        if requested > available {
            return Err(AlignError::InsufficientData {
                requested,
                available,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<T> = rand::seq::index::sample(&mut rng, task_aware.len(), n_aware)
        .into_iter()
        .map(|i| task_aware[i].clone())
        .collect();
    out.extend(
        rand::seq::index::sample(&mut rng, task_agnostic.len(), n_agnostic)
            .into_iter()
            .map(|i| task_agnostic[i].clone()),
    );
    out.shuffle(&mut rng);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(s: &str) -> Vec<String> {
        split_words(s).words
    }

    #[test]
    fn council_trace() {
        let (labels, d) = label_pair(
            &words("The city council approved the budget on Monday"),
            &words("council approved budget Monday"),
        );
        assert_eq!(labels, vec![0, 0, 1, 1, 0, 1, 0, 1]);
        assert_eq!(d.matched, 4);
        assert_eq!(d.match_rate, 1.0);
    }

    #[test]
    fn duplicates_take_first() {
        let (labels, _) = label_pair(&words("a b a c"), &words("a c"));
        assert_eq!(labels, vec![1, 0, 0, 1]);
        let (labels, _) = label_pair(&words("a b a c"), &words("a a"));
        assert_eq!(labels, vec![1, 0, 1, 0]);
    }

    #[test]
    fn case_and_punctuation_insensitive() {
        let (labels, d) = label_pair(&words("The Budget, approved."), &words("budget approved"));
        assert_eq!(labels, vec![0, 1, 1]);
        assert_eq!(d.unmatched_compressed, 0);
    }

    #[test]
    fn unmatched_and_out_of_order_words() {
        let (labels, d) = label_pair(&words("x y z"), &words("z new x"));
        // z claims index 2, the cursor then sits past the end
        assert_eq!(labels, vec![0, 0, 1]);
        assert_eq!(d.matched, 1);
        assert_eq!(d.unmatched_compressed, 2);
        assert!((d.match_rate - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn identity_is_all_ones() {
        let w = words("one two two three");
        let (labels, d) = label_pair(&w, &w);
        assert_eq!(labels, vec![1; 4]);
        assert_eq!(d.match_rate, 1.0);
    }

    #[test]
    fn build_example_boundaries() {
        let e = build_example("", "a b", vec![1, 0]).unwrap();
        assert_eq!((e.boundary_m, e.n()), (0, 2));
        let e = build_example("why?", "a b", vec![1, 0]).unwrap();
        assert_eq!((e.boundary_m, e.n()), (1, 2));
        assert_eq!(
            build_example("", "a b", vec![1]),
            Err(AlignError::LengthMismatch { labels: 1, words: 2 })
        );
    }

    #[test]
    fn validation_flags() {
        let mut e = build_example("", "a b", vec![0, 0]).unwrap();
        assert_eq!(validate_example(&e), vec![ExampleFlag::AllZero]);
        e.labels = vec![1, 0];
        assert!(validate_example(&e).is_empty());
        e.labels = vec![2, 0];
        assert_eq!(validate_example(&e), vec![ExampleFlag::InvalidLabel]);
        assert_eq!(ExampleFlag::InvalidLabel.as_str(), "invalid-label");
        let before = e.clone();
        validate_example(&e);
        assert_eq!(before, e);
    }

    #[test]
    fn jsonl_shape() {
        let e = build_example("why now?", "a b", vec![1, 0]).unwrap();
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(
            s,
            r#"{"instruction":"why now?","original_words":["a","b"],"labels":[1,0],"boundary_m":2}"#
        );
        let back: LabeledExample = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn mixing_boundaries() {
        let aware: Vec<u32> = (0..20).collect();
        let agnostic: Vec<u32> = (100..120).collect();
        let m = mix_datasets(&aware, &agnostic, 0.0, 10, 1).unwrap();
        assert!(m.iter().all(|&x| x >= 100));
        let m = mix_datasets(&aware, &agnostic, 1.0, 10, 1).unwrap();
        assert!(m.iter().all(|&x| x < 100));
        let a = mix_datasets(&aware, &agnostic, 0.5, 10, 7).unwrap();
        let b = mix_datasets(&aware, &agnostic, 0.5, 10, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|&&x| x < 100).count(), 5);
        let mut sorted = a.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
    }

    #[test]
    fn mixing_errors() {
        let small = [1, 2];
        assert_eq!(
            mix_datasets(&small, &small, 1.0, 3, 0),
            Err(AlignError::InsufficientData { requested: 3, available: 2 })
        );
        assert_eq!(mix_datasets(&small, &small, 1.5, 1, 0), Err(AlignError::InvalidAlpha(1.5)));
    }

    proptest! {
        #[test]
        fn deletion_only_pairs_recover_mask(
            orig in prop::collection::vec("[a-d]", 1..30),
            mask in prop::collection::vec(any::<bool>(), 30),
        ) {
            let kept: Vec<String> = orig.iter().zip(&mask).filter(|(_, &k)| k).map(|(w, _)| w.clone()).collect();
            let (labels, d) = label_pair(&orig, &kept);
            prop_assert_eq!(d.match_rate, 1.0);
            let recovered: Vec<&String> = orig.iter().zip(&labels).filter(|(_, &l)| l == 1).map(|(w, _)| w).collect();
            prop_assert_eq!(recovered, kept.iter().collect::<Vec<_>>());
        }

        #[test]
        fn appending_never_loses_labels(
            orig in prop::collection::vec("[a-d]", 1..20),
            comp in prop::collection::vec("[a-e]", 0..20),
            extra in "[a-e]",
        ) {
            let (before, _) = label_pair(&orig, &comp);
            let mut longer = comp.clone();
            longer.push(extra);
            let (after, _) = label_pair(&orig, &longer);
            let ones = |l: &[u8]| l.iter().filter(|&&x| x == 1).count();
            prop_assert!(ones(&after) >= ones(&before));
        }

        #[test]
        fn mix_size_is_exact(alpha in 0.0f64..=1.0, total in 0usize..40, seed in any::<u64>()) {
            let a: Vec<usize> = (0..40).collect();
            let b: Vec<usize> = (40..80).collect();
            let m = mix_datasets(&a, &b, alpha, total, seed).unwrap();
            prop_assert_eq!(m.len(), total);
        }
    }
}
