//! Sequence scoring and perplexity.

use serde::{Deserialize, Serialize};

use crate::infer::log_softmax;
use crate::model::Seq2SeqModel;
use crate::objective::SeqPair;
use crate::NnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    /// One log-probability per target token followed by the `<eos>` prediction.
    pub token_logprobs: Vec<f64>,
    pub total: f64,
}

impl SequenceScore {
    pub fn mean(&self) -> f64 {
        self.total / self.token_logprobs.len() as f64
    }
}

pub fn score_sequence(model: &Seq2SeqModel, src: &[usize], tgt: &[usize]) -> Result<SequenceScore, NnError> {
    let steps = model.forced_logits(src, tgt)?;
    let targets = Seq2SeqModel::shifted_targets(tgt);
    let token_logprobs: Vec<f64> = steps
        .iter()
        .zip(&targets)
        .map(|(step, &t)| log_softmax(step.lm.row(0))[t])
        .collect();
    let total = token_logprobs.iter().sum();
    Ok(SequenceScore {
        token_logprobs,
        total,
    })
}

/// Token-level perplexity `exp(−Σ log p / Σ tokens)` over all pairs.
pub fn perplexity(model: &Seq2SeqModel, pairs: &[SeqPair]) -> Result<f64, NnError> {
    if pairs.is_empty() {
        return Err(NnError::EmptyInput);
    }
    let mut nll = 0.0;
    let mut n = 0usize;
    for pair in pairs {
        let s = score_sequence(model, &pair.src, &pair.tgt)?;
        nll -= s.total;
        n += s.token_logprobs.len();
    }
    Ok((nll / n as f64).exp())
}
