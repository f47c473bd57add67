//! Run configuration: a TOML file with nested sections, overridden by flags.

use std::path::{Path, PathBuf};

use efpc_core::distill::{DistillConfig, InstructionSource, RetryPolicy};
use efpc_core::encoder::{LossVariant, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{path}{}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default(), field.as_ref().map(|f| format!(" (field `{f}`)")).unwrap_or_default())]
    Parse {
        path: String,
        line: Option<usize>,
        field: Option<String>,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSettings {
    /// Use the built-in deterministic mocks instead of a live endpoint.
    pub mock: bool,
    pub base_url: String,
    pub model_name: String,
    pub timeout_secs: u64,
    pub concurrency: usize,
    pub max_attempts: u32,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        Self {
            mock: true,
            base_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-4".into(),
            timeout_secs: 60,
            concurrency: 4,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub labeled: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSettings {
    pub max_units: usize,
    pub max_failure_fraction: f64,
    pub instructions: InstructionSource,
}

impl Default for DistillSettings {
    fn default() -> Self {
        let d = DistillConfig::default();
        Self {
            max_units: d.max_units,
            max_failure_fraction: d.max_failure_fraction,
            instructions: d.instructions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let d = ModelConfig::default();
        Self {
            embed_dim: d.embed_dim,
            num_layers: d.num_layers,
            num_heads: d.num_heads,
            ffn_dim: d.ffn_dim,
            max_seq_len: d.max_seq_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub loss: LossVariant,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub include_degenerate: bool,
    /// Task-aware share for joint training.
    pub alpha: Option<f64>,
    /// Mixture size for joint training; defaults to the task-aware set size.
    pub total: Option<usize>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            loss: d.loss_variant,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            epochs: d.epochs,
            include_degenerate: d.include_degenerate,
            alpha: None,
            total: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressSettings {
    pub ratio: Option<f64>,
    pub budget: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub bin_width: f64,
    pub fractions: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            bin_width: 1.0,
            fractions: vec![0.0, 0.1, 0.5, 1.0],
            alphas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model init, shuffling, mixing and sweep subsets.
    pub seed: u64,
    pub provider: ProviderSettings,
    pub paths: Paths,
    pub distill: DistillSettings,
    pub model: ModelSettings,
    pub train: TrainSettings,
    pub compress: CompressSettings,
    pub eval: EvalSettings,
}

fn parse_error(path: &Path, text: &str, err: &toml::de::Error) -> ConfigError {
    let (line, field) = match err.span() {
        Some(span) => {
            let line_idx = text[..span.start.min(text.len())].matches('\n').count();
            let field = text
                .lines()
                .nth(line_idx)
                .and_then(|l| l.split_once('='))
                .map(|(k, _)| k.trim().to_string())
                .filter(|k| !k.is_empty());
            (Some(line_idx + 1), field)
        }
        None => (None, None),
    };
    ConfigError::Parse {
        path: path.display().to_string(),
        line,
        field,
        message: err.message().to_string(),
    }
}

pub fn parse_config(path: &Path, text: &str) -> Result<RunConfig, ConfigError> {
    toml::from_str(text).map_err(|e| parse_error(path, text, &e))
}

/// Reads and validates a config file. Compression-target exclusivity is
/// checked per command, after flags are applied.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse {
        path: path.display().to_string(),
        line: None,
        field: None,
        message: e.to_string(),
    })?;
    let config = parse_config(path, &text)?;
    config.validate()?;
    Ok(config)
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation(msg.into())
}

fn check_increasing(name: &str, values: &[f64]) -> Result<(), ConfigError> {
    if values.is_empty()
        || values.iter().any(|v| !(0.0..=1.0).contains(v))
        || values.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(invalid(format!("{name} must be non-empty, within [0, 1] and strictly increasing")));
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.provider.mock && (self.provider.base_url.is_empty() || self.provider.model_name.is_empty()) {
            return Err(invalid("a live provider needs provider.base_url and provider.model_name"));
        }
        if self.provider.concurrency == 0 {
            return Err(invalid("provider.concurrency must be positive"));
        }
        if self.distill.max_units == 0 {
            return Err(invalid("distill.max_units must be positive"));
        }
        if !(0.0..=1.0).contains(&self.distill.max_failure_fraction) {
            return Err(invalid("distill.max_failure_fraction must lie in [0, 1]"));
        }
        ModelConfig {
            vocab_size: 3,
            ..self.model_config()
        }
        .validate()
        .map_err(|e| invalid(format!("model: {e}")))?;
        self.train_config().validate().map_err(|e| invalid(format!("train: {e}")))?;
        if let Some(a) = self.train.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(invalid("train.alpha must lie in [0, 1]"));
            }
        }
        if let Some(r) = self.compress.ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(invalid("compress.ratio must lie in (0, 1]"));
            }
        }
        if self.compress.budget == Some(0) {
            return Err(invalid("compress.budget must be positive"));
        }
        if !(self.eval.bin_width > 0.0) {
            return Err(invalid("eval.bin_width must be positive"));
        }
        check_increasing("eval.fractions", &self.eval.fractions)?;
        check_increasing("eval.alphas", &self.eval.alphas)?;
        Ok(())
    }

    /// `vocab_size` is filled in from the vocabulary at model creation.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vocab_size: 3,
            embed_dim: self.model.embed_dim,
            num_layers: self.model.num_layers,
            num_heads: self.model.num_heads,
            ffn_dim: self.model.ffn_dim,
            max_seq_len: self.model.max_seq_len,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            loss_variant: self.train.loss,
            include_degenerate: self.train.include_degenerate,
            seed: self.seed,
            ..Default::default()
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            max_units: self.distill.max_units,
            max_failure_fraction: self.distill.max_failure_fraction,
            concurrency: self.provider.concurrency,
            retry: RetryPolicy {
                max_attempts: self.provider.max_attempts,
                ..Default::default()
            },
            instructions: self.distill.instructions,
        }
    }

    /// Exactly one of ratio and budget.
    pub fn compression_target(&self) -> Result<efpc_core::compressor::Target, ConfigError> {
        use efpc_core::compressor::Target;
        match (self.compress.ratio, self.compress.budget) {
            (Some(r), None) => Ok(Target::KeepRatio(r)),
            (None, Some(b)) => Ok(Target::Budget(b)),
            (Some(_), Some(_)) => Err(invalid("exactly one compression target: ratio and budget are both set")),
            (None, None) => Err(invalid("exactly one compression target: set either ratio or budget")),
        }
    }

    /// The configuration minus file locations, so that digests do not
    /// depend on where a run happens.
    pub fn without_paths(&self) -> Self {
        Self {
            paths: Paths::default(),
            ..self.clone()
        }
    }
}
