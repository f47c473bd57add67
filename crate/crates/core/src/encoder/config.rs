use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("embed_dim {embed_dim} is not divisible by num_heads {num_heads}")]
    HeadSplit { embed_dim: usize, num_heads: usize },
    #[error("max_seq_len must be at least 8, got {0}")]
    SeqLen(usize),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 3,
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 128,
            max_seq_len: 256,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
        ] {
            if v == 0 {
                return Err(ConfigError::NonPositive(name));
            }
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(ConfigError::HeadSplit {
                embed_dim: self.embed_dim,
                num_heads: self.num_heads,
            });
        }
        if self.max_seq_len < 8 {
            return Err(ConfigError::SeqLen(self.max_seq_len));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }
}

/// How instruction positions enter the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    /// Instruction is not fed to the model at all.
    Agnostic,
    /// Instruction positions are labeled "discard" and averaged in.
    Drop,
    /// Instruction positions are excluded from the average.
    #[default]
    Mask,
}

impl LossVariant {
    pub fn uses_instruction(self) -> bool {
        !matches!(self, LossVariant::Agnostic)
    }
}

impl std::str::FromStr for LossVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "agnostic" => Ok(LossVariant::Agnostic),
            "drop" => Ok(LossVariant::Drop),
            "mask" => Ok(LossVariant::Mask),
            other => Err(format!("unknown loss variant {other:?} (agnostic|drop|mask)")),
        }
    }
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossVariant::Agnostic => "agnostic",
            LossVariant::Drop => "drop",
            LossVariant::Mask => "mask",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss_variant: LossVariant,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Train on all-zero-label examples too.
    pub include_degenerate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 10,
            epochs: 10,
            loss_variant: LossVariant::Mask,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            include_degenerate: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.learning_rate > 0.0) {
            return Err(ConfigError::NonPositive("learning_rate"));
        }
        if self.epochs == 0 {
            return Err(ConfigError::NonPositive("epochs"));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::NonPositive("batch_size"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let t = TrainConfig::default();
        assert_eq!(t.learning_rate, 1e-5);
        assert_eq!((t.batch_size, t.epochs), (10, 10));
        assert_eq!(t.loss_variant, LossVariant::Mask);
        assert_eq!((t.beta1, t.beta2, t.epsilon), (0.9, 0.999, 1e-8));
        let m = ModelConfig::default();
        assert_eq!((m.embed_dim, m.num_layers, m.num_heads, m.ffn_dim, m.max_seq_len), (64, 2, 4, 128, 256));
    }

    #[test]
    fn invariants() {
        let t = TrainConfig { epochs: 0, ..Default::default() };
        assert_eq!(t.validate(), Err(ConfigError::NonPositive("epochs")));
        let t = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(t.validate().is_err());
        let m = ModelConfig { embed_dim: 10, num_heads: 4, ..Default::default() };
        assert!(matches!(m.validate(), Err(ConfigError::HeadSplit { .. })));
        let m = ModelConfig { max_seq_len: 7, ..Default::default() };
        assert_eq!(m.validate(), Err(ConfigError::SeqLen(7)));
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("mask".parse::<LossVariant>().unwrap(), LossVariant::Mask);
        assert!("foo".parse::<LossVariant>().is_err());
        assert_eq!(LossVariant::Drop.to_string(), "drop");
    }
}
