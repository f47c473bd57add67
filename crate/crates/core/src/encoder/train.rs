use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adam::{adam_step, AdamState};
use super::config::{ConfigError, LossVariant, ModelConfig, TrainConfig};
use super::loss;
use super::model::{backward_from_logits, forward, preserve_probs, tokenize_example, Model, ModelError, TokenizedExample};
use super::params::ModelParams;
use super::vocab::Vocab;
use crate::align::{is_trainable, LabeledExample};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("no trainable examples")]
    EmptyDataset,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy on original-word positions, measured during the epoch.
    pub token_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub examples: usize,
    pub windows: usize,
    pub skipped_degenerate: usize,
}

impl<T: Scalar> Model<T> {
    /// Fresh seeded weights sized for `vocab`.
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self, ConfigError> {
        let config = ModelConfig {
            vocab_size: vocab.size(),
            ..config
        };
        Ok(Self {
            params: ModelParams::init(config)?,
            vocab,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    pub fn tokenize(
        &self,
        examples: &[LabeledExample],
        with_instruction: bool,
    ) -> Result<Vec<TokenizedExample>, ModelError> {
        let mut out = Vec::new();
        for e in examples {
            out.extend(tokenize_example(&self.vocab, e, with_instruction, self.params.config.max_seq_len)?);
        }
        Ok(out)
    }
}

/// Trains `model` in place of a copy and returns it with per-epoch stats.
///
/// Starting from a trained checkpoint gives incremental training; passing
/// the output of `mix_datasets` gives joint training. Instructions are fed
/// to the model unless the loss variant is `Agnostic`.
pub fn train<T: Scalar>(
    model: &Model<T>,
    dataset: &[LabeledExample],
    config: &TrainConfig,
) -> Result<(Model<T>, TrainReport), TrainError> {
    config.validate()?;
    let kept: Vec<LabeledExample> = dataset
        .iter()
        .filter(|e| config.include_degenerate || is_trainable(e))
        .cloned()
        .collect();
    let skipped_degenerate = dataset.len() - kept.len();
    if kept.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let variant = config.loss_variant;
    let windows = model.tokenize(&kept, variant.uses_instruction())?;

    let mut params = model.params.clone();
    let mut state = AdamState::new(&params);
    let mut grads = params.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut report = TrainReport {
        examples: kept.len(),
        windows: windows.len(),
        skipped_degenerate,
        ..Default::default()
    };

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut positions = 0usize;
        for batch in order.chunks(config.batch_size) {
            grads.visit_mut(|_, m| m.fill_zero());
            for &i in batch {
                let ex = &windows[i];
                let cache = forward(&params, &ex.token_ids)?;
                let l = loss::loss(variant, &cache.probs, &ex.labels, ex.boundary).map_err(ModelError::from)?;
                let dl = loss::logit_grads(variant, &cache.probs, &ex.labels, ex.boundary)
                    .map_err(ModelError::from)?;
                backward_from_logits(&params, &cache, &dl, &mut grads);
                loss_sum += l.as_f64();
                for (p, &y) in cache.probs[ex.boundary..].iter().zip(&ex.labels) {
                    correct += usize::from(predicted_label(p[0]) == y);
                }
                positions += ex.labels.len();
            }
            let inv = T::one() / T::lit(batch.len() as f64);
            grads.visit_mut(|_, m| m.scale(inv));
            adam_step(&mut params, &grads, &mut state, config).expect("gradient shaped like params");
        }
        report.epochs.push(EpochStats {
            epoch: epoch + 1,
            mean_loss: loss_sum / windows.len() as f64,
            token_accuracy: if positions == 0 { 0.0 } else { correct as f64 / positions as f64 },
        });
        log::debug!("epoch {} loss {:.6}", epoch + 1, loss_sum / windows.len() as f64);
    }

    Ok((
        Model {
            params,
            vocab: model.vocab.clone(),
        },
        report,
    ))
}

pub fn predicted_label<T: Scalar>(p_preserve: T) -> u8 {
    u8::from(p_preserve > T::lit(0.5))
}

/// Fraction of original-word positions whose predicted label matches.
pub fn token_accuracy<T: Scalar>(
    model: &Model<T>,
    examples: &[LabeledExample],
    with_instruction: bool,
) -> Result<f64, ModelError> {
    let (mut correct, mut total) = (0usize, 0usize);
    for w in model.tokenize(examples, with_instruction)? {
        let probs = preserve_probs(&model.params, &w)?;
        for (p, &y) in probs.iter().zip(&w.labels) {
            correct += usize::from(predicted_label(*p) == y);
        }
        total += w.labels.len();
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

/// Mean per-window loss under `variant`.
pub fn mean_loss<T: Scalar>(
    model: &Model<T>,
    examples: &[LabeledExample],
    variant: LossVariant,
) -> Result<f64, ModelError> {
    let windows = model.tokenize(examples, variant.uses_instruction())?;
    let mut sum = 0.0;
    for w in &windows {
        let cache = forward(&model.params, &w.token_ids)?;
        sum += loss::loss(variant, &cache.probs, &w.labels, w.boundary)?.as_f64();
    }
    Ok(if windows.is_empty() { 0.0 } else { sum / windows.len() as f64 })
}
