//! Small f64 transformer models with reverse-mode autodiff, training, decoding,
//! checkpoints and text embedders.

pub mod checkpoint;
pub mod embed;
pub mod generate;
pub mod gradcheck;
pub mod infer;
pub mod model;
pub mod objective;
pub mod optim;
pub mod params;
pub mod sampler;
pub mod score;
pub mod tape;
pub mod train;
pub mod vocab;

pub use ndarray;
pub use generate::{generate, Candidate, LmScorer, StepScorer, Strategy};
pub use model::{EncoderClassifier, ModelConfig, Seq2SeqModel};
pub use objective::{ClassExample, LabeledSeq, SeqPair};
pub use params::{Grads, ParamStore};
pub use train::{fit, TrainConfig, TrainReport};
pub use vocab::Vocab;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("empty input sequence")]
    EmptyInput,
    #[error("sequence of length {len} exceeds max_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of size {vocab}")]
    OutOfVocab { id: usize, vocab: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss {loss} at update {update}")]
    NonFiniteLoss { update: usize, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
