//! The dialogue agent wrapper shared by evaluation, the pipeline and the service.

use std::path::Path;

use juicer_nn::checkpoint::Checkpoint;
use juicer_nn::generate::Strategy;
use juicer_nn::score::score_sequence;
use juicer_nn::{Seq2SeqModel, Vocab};
use serde::{Deserialize, Serialize};

use crate::corpus::Turn;
use crate::director::director_decode;
use crate::text::{pack, target};
use crate::Result;

/// Produces a reply to a conversation prefix.
pub trait Responder {
    fn reply(&self, context: &[Turn]) -> Result<String>;

    /// `(Σ log p, token count)` of `reference` as the reply, when the agent's
    /// decoding distribution is a proper LM distribution.
    fn log_likelihood(&self, _context: &[Turn], _reference: &str) -> Option<Result<(f64, usize)>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub max_new: usize,
    /// Classifier-head weight in the blended token score; 0 is plain LM decoding.
    pub blend_weight: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: Strategy::Greedy,
            max_new: 20,
            blend_weight: 0.0,
        }
    }
}

/// A trained context → reply model.
#[derive(Debug, Clone)]
pub struct DialogueModel {
    pub model: Seq2SeqModel,
    pub vocab: Vocab,
    pub decode: DecodeConfig,
}

/// Model input for replying after the given turn texts.
pub fn dialogue_source(vocab: &Vocab, context: &[&str], max_len: usize) -> Vec<usize> {
    pack(vocab, &[], context, &[], max_len)
}

impl DialogueModel {
    pub fn source(&self, context: &[Turn]) -> Vec<usize> {
        let ctx: Vec<&str> = context.iter().map(|t| t.text.as_str()).collect();
        dialogue_source(&self.vocab, &ctx, self.model.cfg.max_len)
    }

    pub fn save(&self, path: &Path, mut meta: serde_json::Value) -> Result<()> {
        if let serde_json::Value::Object(m) = &mut meta {
            m.insert("decode".into(), serde_json::to_value(&self.decode)?);
        } else {
            meta = serde_json::json!({ "decode": self.decode });
        }
        Checkpoint::from_seq2seq(&self.model, &self.vocab, meta).save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let ck = Checkpoint::load(path)?;
        let meta = ck.meta.clone();
        let decode = meta
            .get("decode")
            .map(|d| serde_json::from_value(d.clone()))
            .transpose()?
            .unwrap_or_default();
        let (model, vocab) = ck.into_seq2seq()?;
        Ok((DialogueModel { model, vocab, decode }, meta))
    }
}

impl Responder for DialogueModel {
    fn reply(&self, context: &[Turn]) -> Result<String> {
        let src = self.source(context);
        if src.is_empty() {
            return Ok(String::new());
        }
        let d = &self.decode;
        let best = director_decode(&self.model, &src, d.blend_weight, d.strategy, d.max_new)?;
        Ok(best.map(|c| self.vocab.decode(&c.tokens)).unwrap_or_default())
    }

    fn log_likelihood(&self, context: &[Turn], reference: &str) -> Option<Result<(f64, usize)>> {
        if self.decode.blend_weight > 0.0 {
            return None;
        }
        let src = self.source(context);
        let tgt = target(&self.vocab, reference, self.model.cfg.max_len);
        Some(
            score_sequence(&self.model, &src, &tgt)
                .map(|s| (s.total, s.token_logprobs.len()))
                .map_err(Into::into),
        )
    }
}
