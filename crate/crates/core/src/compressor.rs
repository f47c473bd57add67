//! Inference: score every original word and keep the top `round(tau * N)`
//! in their original order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::model::{preserve_probs, tokenize_windows, Model, ModelError};
use crate::scalar::Scalar;
use crate::text::{split_words, WordSeq};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompressError {
    #[error("keep ratio must lie in (0, 1], got {0}")]
    InvalidRatio(f64),
    #[error("word budget must be positive")]
    InvalidBudget,
    #[error("nothing to compress: original text has no words")]
    EmptyOriginal,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Either a keep fraction `tau` or an absolute word budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    KeepRatio(f64),
    Budget(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRequest {
    /// Empty for task-agnostic compression.
    pub instruction: String,
    pub original: String,
    pub target: Target,
}

impl CompressionRequest {
    pub fn new(instruction: impl Into<String>, original: impl Into<String>, target: Target) -> Self {
        Self {
            instruction: instruction.into(),
            original: original.into(),
            target,
        }
    }

    pub fn validate(&self) -> Result<(), CompressError> {
        match self.target {
            Target::KeepRatio(tau) if !(tau > 0.0 && tau <= 1.0) => Err(CompressError::InvalidRatio(tau)),
            Target::Budget(0) => Err(CompressError::InvalidBudget),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionResult {
    pub kept_words: Vec<String>,
    pub kept_indices: Vec<usize>,
    /// Preserve probability of every original word.
    pub probabilities: Vec<f64>,
    pub n_original: usize,
    /// `N / Ñ`
    pub achieved_inverse_ratio: f64,
}

impl CompressionResult {
    pub fn kept_text(&self) -> String {
        self.kept_words.join(" ")
    }

    pub fn record(&self) -> CompressionRecord {
        CompressionRecord {
            kept_text: self.kept_text(),
            kept_indices: self.kept_indices.clone(),
            achieved_inverse_ratio: self.achieved_inverse_ratio,
            n_original: self.n_original,
            n_kept: self.kept_indices.len(),
        }
    }
}

/// Output line: `{"kept_text","kept_indices","achieved_inverse_ratio","n_original","n_kept"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRecord {
    pub kept_text: String,
    pub kept_indices: Vec<usize>,
    pub achieved_inverse_ratio: f64,
    pub n_original: usize,
    pub n_kept: usize,
}

/// `clamp(round_half_up(tau * n), 1, n)`. A 1e-9 slack absorbs binary
/// representation error so that e.g. `0.3 * 5` rounds to 2.
pub fn target_keep_count(n: usize, tau: f64) -> usize {
    assert!(n >= 1, "n must be positive");
    let k = (tau * n as f64 + 0.5 + 1e-9).floor();
    (k.max(1.0) as usize).min(n)
}

/// Indices of the `keep` highest scores, lower index first on ties,
/// returned in ascending order.
pub fn select_top(scores: &[f64], keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(keep);
    order.sort_unstable();
    order
}

/// Preserve probability per original word. Long inputs are scored in
/// windows, each carrying the instruction and separator.
pub fn score_words<T: Scalar>(
    model: &Model<T>,
    instruction: &str,
    original: &WordSeq,
) -> Result<Vec<f64>, CompressError> {
    if original.is_empty() {
        return Err(CompressError::EmptyOriginal);
    }
    let instruction_words = split_words(instruction).words;
    let windows = tokenize_windows(
        &model.vocab,
        &instruction_words,
        &original.words,
        None,
        model.params.config.max_seq_len,
    )?;
    let mut out = Vec::with_capacity(original.len());
    for w in &windows {
        out.extend(preserve_probs(&model.params, w)?.into_iter().map(Scalar::as_f64));
    }
    Ok(out)
}

pub fn compress<T: Scalar>(
    model: &Model<T>,
    request: &CompressionRequest,
) -> Result<CompressionResult, CompressError> {
    request.validate()?;
    let seq = split_words(&request.original);
    let probabilities = score_words(model, &request.instruction, &seq)?;
    Ok(select(seq, probabilities, request.target))
}

/// Selection step on precomputed scores.
pub fn select(seq: WordSeq, probabilities: Vec<f64>, target: Target) -> CompressionResult {
    let n = seq.len();
    let tau = match target {
        Target::KeepRatio(tau) => tau,
        Target::Budget(b) => (b as f64 / n as f64).min(1.0),
    };
    let keep = target_keep_count(n, tau);
    let kept_indices = select_top(&probabilities, keep);
    let kept_words = kept_indices.iter().map(|&i| seq.words[i].clone()).collect();
    CompressionResult {
        kept_words,
        achieved_inverse_ratio: n as f64 / keep as f64,
        kept_indices,
        probabilities,
        n_original: n,
    }
}

/// One result slot per request, in request order. A failing request does
/// not affect the others.
pub fn compress_batch<T: Scalar>(
    model: &Model<T>,
    requests: &[CompressionRequest],
) -> Vec<Result<CompressionResult, CompressError>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(requests.len().max(1));
    let per = requests.len().div_ceil(threads.max(1)).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = requests
            .chunks(per)
            .map(|part| s.spawn(move || part.iter().map(|r| compress(model, r)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("compression worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{ModelConfig, Vocab};

    #[test]
    fn keep_count_examples() {
        assert_eq!(target_keep_count(4, 0.5), 2);
        assert_eq!(target_keep_count(10, 0.05), 1);
        assert_eq!(target_keep_count(5, 0.5), 3);
        assert_eq!(target_keep_count(5, 0.3), 2);
        assert_eq!(target_keep_count(7, 1.0), 7);
    }

    #[test]
    fn selection_examples() {
        let seq = split_words("a b c d");
        let r = select(seq.clone(), vec![0.9, 0.1, 0.8, 0.2], Target::KeepRatio(0.5));
        assert_eq!(r.kept_indices, vec![0, 2]);
        assert_eq!(r.kept_text(), "a c");
        assert_eq!(r.achieved_inverse_ratio, 2.0);

        let r = select(seq.clone(), vec![0.5; 4], Target::KeepRatio(0.5));
        assert_eq!(r.kept_indices, vec![0, 1]);

        let r = select(seq.clone(), vec![0.3, 0.9, 0.1, 0.2], Target::KeepRatio(1.0));
        assert_eq!(r.kept_words, seq.words);

        let r = select(seq.clone(), vec![0.3, 0.9, 0.1, 0.2], Target::Budget(10));
        assert_eq!(r.kept_indices, vec![0, 1, 2, 3]);
        let r = select(seq, vec![0.3, 0.9, 0.1, 0.2], Target::Budget(1));
        assert_eq!(r.kept_indices, vec![1]);
    }

    #[test]
    fn request_validation() {
        for bad in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(CompressionRequest::new("", "a", Target::KeepRatio(bad)).validate().is_err());
        }
        assert_eq!(
            CompressionRequest::new("", "a", Target::Budget(0)).validate(),
            Err(CompressError::InvalidBudget)
        );
    }

    fn model() -> Model<f64> {
        Model::new(
            ModelConfig { embed_dim: 8, num_heads: 2, ffn_dim: 8, max_seq_len: 8, seed: 9, ..Default::default() },
            Vocab::from_words(["a", "b", "c", "d", "e", "q"]),
        )
        .unwrap()
    }

    #[test]
    fn scoring_windows_and_modes() {
        let m = model();
        let seq = split_words("a b c d e a b c d e a b c");
        let probs = score_words(&m, "q", &seq).unwrap();
        assert_eq!(probs.len(), 13);
        assert_eq!(probs, score_words(&m, "q", &seq).unwrap());
        let agnostic = score_words(&m, "", &seq).unwrap();
        assert_eq!(agnostic.len(), 13);
        assert_ne!(agnostic, probs);
        assert_eq!(score_words(&m, "", &split_words("")), Err(CompressError::EmptyOriginal));
        assert!(matches!(
            score_words(&m, "q q q q q q q", &seq),
            Err(CompressError::Model(ModelError::InstructionTooLong { .. }))
        ));
    }

    #[test]
    fn batch_matches_single_and_isolates_errors() {
        let m = model();
        let ok = CompressionRequest::new("q", "a b c d e", Target::KeepRatio(0.4));
        let bad = CompressionRequest::new("q", "a b", Target::KeepRatio(2.0));
        let out = compress_batch(&m, &[ok.clone(), bad, ok.clone()]);
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].as_ref().unwrap(), &compress(&m, &ok).unwrap());
        assert_eq!(out[1], Err(CompressError::InvalidRatio(2.0)));
        assert_eq!(out[2], out[0]);
        assert_eq!(compress_batch(&m, std::slice::from_ref(&ok))[0], compress(&m, &ok));
    }

    #[test]
    fn record_shape() {
        let r = select(split_words("x y z"), vec![0.1, 0.9, 0.5], Target::KeepRatio(0.5));
        let json = serde_json::to_string(&r.record()).unwrap();
        assert_eq!(
            json,
            r#"{"kept_text":"y z","kept_indices":[1,2],"achieved_inverse_ratio":1.5,"n_original":3,"n_kept":2}"#
        );
    }
}
