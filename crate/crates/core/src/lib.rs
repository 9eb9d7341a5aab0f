//! The feedback-learning dialogue pipeline: synthetic corpus, satisfaction
//! classifier, reply corrector, joint decoder-classifier, evaluation and the
//! orchestration that ties them together.

pub mod corpus;
pub mod corrector;
pub mod dialogue;
pub mod director;
pub mod eval;
pub mod pipeline;
pub mod satisfaction;
pub mod seeds;
pub mod text;

use juicer_nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("conversation {id}: {msg}")]
    InvalidConversation { id: String, msg: String },
    #[error("line {line}: field `{field}`: {msg}")]
    Schema { line: usize, field: String, msg: String },
    #[error("{0}")]
    InvalidInput(String),
    #[error("pipeline step `{step}` failed: {source}")]
    Step {
        step: String,
        #[source]
        source: Box<CoreError>,
    },
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
