//! Token-classification encoder: vocabulary, parameters, forward and
//! backward passes, the three training losses, Adam, training loop and
//! checkpoint files.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use adam::{adam_step, AdamState, ShapeMismatch};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use config::{LossVariant, ModelConfig, TrainConfig};
pub use loss::{loss_agnostic, loss_drop, loss_mask};
pub use model::{backward, classify, encode, forward, Model, ModelError, TokenizedExample};
pub use params::ModelParams;
pub use tensor::Matrix;
pub use train::{mean_loss, token_accuracy, train, TrainError, TrainReport};
pub use vocab::{build_vocab, Vocab};
