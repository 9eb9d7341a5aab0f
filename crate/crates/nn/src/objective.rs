//! Training objectives: teacher-forced LM cross-entropy, weighted binary
//! classification, and the joint LM + per-token classification loss.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{ClassifierArch, Seq2SeqArch, Seq2SeqModel};
use crate::params::{Grads, ParamStore};
use crate::sampler::{BatchSampler, EpochSampler};
use crate::tape::Tape;

/// A source/target pair of token ids. Targets exclude `<bos>`/`<eos>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqPair {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

/// A target sequence whose tokens carry binary labels and a loss mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeq {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
    pub labels: Vec<f64>,
    pub mask: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassExample {
    pub input: Vec<usize>,
    pub label: f64,
    pub weight: f64,
}

/// Something [`crate::train::fit`] can optimize.
pub trait Objective {
    /// Draws a minibatch, accumulates its gradient into `grads` and returns its loss.
    fn train_batch(
        &mut self,
        params: &ParamStore,
        grads: &mut Grads,
        rng: &mut ChaCha8Rng,
        batch_size: usize,
    ) -> f64;

    /// Held-out loss used for early stopping, if a validation set exists.
    fn validation_loss(&self, params: &ParamStore) -> Option<f64>;
}

/// Mean token cross-entropy `Σ CE / Σ (|tgt|+1)` over `pairs`; accumulates gradients when asked.
pub fn lm_loss(
    arch: &Seq2SeqArch,
    params: &ParamStore,
    pairs: &[&SeqPair],
    mut grads: Option<&mut Grads>,
    mut dropout: Option<&mut ChaCha8Rng>,
) -> f64 {
    let n_tokens: usize = pairs.iter().map(|p| p.tgt.len() + 1).sum();
    if n_tokens == 0 {
        return 0.0;
    }
    let w = 1.0 / n_tokens as f64;
    let mut total = 0.0;
    for pair in pairs {
        let mut tape = Tape::new(params);
        let h = arch.decoder_states(&mut tape, &pair.src, &pair.tgt, dropout.as_deref_mut());
        let logits = arch.lm_logits(&mut tape, h);
        let targets = Seq2SeqModel::shifted_targets(&pair.tgt);
        let weights = vec![w; targets.len()];
        let loss = tape.cross_entropy(logits, &targets, &weights);
        total += tape.scalar(loss);
        if let Some(g) = grads.as_deref_mut() {
            tape.backward(loss, g);
        }
    }
    total
}

/// Weighted mean binary cross-entropy `Σ w·BCE / Σ w`.
pub fn classifier_loss(
    arch: &ClassifierArch,
    params: &ParamStore,
    examples: &[&ClassExample],
    mut grads: Option<&mut Grads>,
    mut dropout: Option<&mut ChaCha8Rng>,
) -> f64 {
    let total_w: f64 = examples.iter().map(|e| e.weight).sum();
    if total_w <= 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for ex in examples {
        let mut tape = Tape::new(params);
        let z = arch.logit(&mut tape, &ex.input, dropout.as_deref_mut());
        let loss = tape.bce_logits(z, &[(0, 0)], &[ex.label], &[ex.weight / total_w]);
        total += tape.scalar(loss);
        if let Some(g) = grads.as_deref_mut() {
            tape.backward(loss, g);
        }
    }
    total
}

/// `(1−γ)·LM + γ·masked BCE`, where the BCE reads the classifier-head logit of each
/// realized target token at the position that predicts it.
pub fn director_loss(
    arch: &Seq2SeqArch,
    params: &ParamStore,
    lm_pairs: &[&SeqPair],
    labeled: &[&LabeledSeq],
    gamma: f64,
    mut grads: Option<&mut Grads>,
    mut dropout: Option<&mut ChaCha8Rng>,
) -> f64 {
    let mut total = 0.0;
    if gamma < 1.0 && !lm_pairs.is_empty() {
        let lm = lm_loss(arch, params, lm_pairs, None, None);
        if let Some(g) = grads.as_deref_mut() {
            let mut tmp = Grads::zeros_like(params);
            lm_loss(arch, params, lm_pairs, Some(&mut tmp), dropout.as_deref_mut());
            for (acc, part) in g.values.iter_mut().zip(&tmp.values) {
                acc.scaled_add(1.0 - gamma, part);
            }
        }
        total += (1.0 - gamma) * lm;
    }
    if gamma > 0.0 {
        let n_mask: f64 = labeled.iter().flat_map(|s| s.mask.iter()).sum();
        if n_mask > 0.0 {
            let w = gamma / n_mask;
            for seq in labeled {
                let mut tape = Tape::new(params);
                let h = arch.decoder_states(&mut tape, &seq.src, &seq.tgt, dropout.as_deref_mut());
                let logits = arch.cls_logits(&mut tape, h);
                let cells: Vec<(usize, usize)> =
                    seq.tgt.iter().enumerate().map(|(i, &t)| (i, t)).collect();
                let weights: Vec<f64> = seq.mask.iter().map(|m| m * w).collect();
                let loss = tape.bce_logits(logits, &cells, &seq.labels, &weights);
                total += tape.scalar(loss);
                if let Some(g) = grads.as_deref_mut() {
                    tape.backward(loss, g);
                }
            }
        }
    }
    total
}

fn pick<'a, T>(items: &'a [T], idx: &[usize]) -> Vec<&'a T> {
    idx.iter().map(|&i| &items[i]).collect()
}

pub struct LmObjective<'d> {
    arch: Seq2SeqArch,
    train: &'d [SeqPair],
    valid: &'d [SeqPair],
    sampler: Box<dyn BatchSampler + 'd>,
}

impl<'d> LmObjective<'d> {
    pub fn new(arch: Seq2SeqArch, train: &'d [SeqPair], valid: &'d [SeqPair]) -> Self {
        let sampler = Box::new(EpochSampler::new(train.len()));
        LmObjective {
            arch,
            train,
            valid,
            sampler,
        }
    }

    /// Replaces the default shuffled-epoch sampler (e.g. with weighted task pools).
    pub fn with_sampler(mut self, sampler: Box<dyn BatchSampler + 'd>) -> Self {
        self.sampler = sampler;
        self
    }
}

impl Objective for LmObjective<'_> {
    fn train_batch(
        &mut self,
        params: &ParamStore,
        grads: &mut Grads,
        rng: &mut ChaCha8Rng,
        batch_size: usize,
    ) -> f64 {
        let idx = self.sampler.next_batch(rng, batch_size);
        let batch = pick(self.train, &idx);
        lm_loss(&self.arch, params, &batch, Some(grads), Some(rng))
    }

    fn validation_loss(&self, params: &ParamStore) -> Option<f64> {
        if self.valid.is_empty() {
            return None;
        }
        let all: Vec<&SeqPair> = self.valid.iter().collect();
        Some(lm_loss(&self.arch, params, &all, None, None))
    }
}

pub struct ClassifierObjective<'d> {
    arch: ClassifierArch,
    train: &'d [ClassExample],
    valid: &'d [ClassExample],
    sampler: EpochSampler,
}

impl<'d> ClassifierObjective<'d> {
    pub fn new(arch: ClassifierArch, train: &'d [ClassExample], valid: &'d [ClassExample]) -> Self {
        ClassifierObjective {
            arch,
            train,
            valid,
            sampler: EpochSampler::new(train.len()),
        }
    }
}

impl Objective for ClassifierObjective<'_> {
    fn train_batch(
        &mut self,
        params: &ParamStore,
        grads: &mut Grads,
        rng: &mut ChaCha8Rng,
        batch_size: usize,
    ) -> f64 {
        let idx = self.sampler.next_batch(rng, batch_size);
        let batch = pick(self.train, &idx);
        classifier_loss(&self.arch, params, &batch, Some(grads), Some(rng))
    }

    fn validation_loss(&self, params: &ParamStore) -> Option<f64> {
        if self.valid.is_empty() {
            return None;
        }
        let all: Vec<&ClassExample> = self.valid.iter().collect();
        Some(classifier_loss(&self.arch, params, &all, None, None))
    }
}

pub struct DirectorObjective<'d> {
    arch: Seq2SeqArch,
    lm_train: &'d [SeqPair],
    cls_train: &'d [LabeledSeq],
    lm_valid: &'d [SeqPair],
    cls_valid: &'d [LabeledSeq],
    gamma: f64,
    lm_sampler: EpochSampler,
    cls_sampler: EpochSampler,
}

impl<'d> DirectorObjective<'d> {
    pub fn new(
        arch: Seq2SeqArch,
        lm_train: &'d [SeqPair],
        cls_train: &'d [LabeledSeq],
        lm_valid: &'d [SeqPair],
        cls_valid: &'d [LabeledSeq],
        gamma: f64,
    ) -> Self {
        DirectorObjective {
            arch,
            lm_train,
            cls_train,
            lm_valid,
            cls_valid,
            gamma,
            lm_sampler: EpochSampler::new(lm_train.len()),
            cls_sampler: EpochSampler::new(cls_train.len()),
        }
    }
}

impl Objective for DirectorObjective<'_> {
    fn train_batch(
        &mut self,
        params: &ParamStore,
        grads: &mut Grads,
        rng: &mut ChaCha8Rng,
        batch_size: usize,
    ) -> f64 {
        let lm_idx = if self.gamma < 1.0 {
            self.lm_sampler.next_batch(rng, batch_size)
        } else {
            Vec::new()
        };
        let cls_idx = if self.gamma > 0.0 {
            self.cls_sampler.next_batch(rng, batch_size)
        } else {
            Vec::new()
        };
        let lm = pick(self.lm_train, &lm_idx);
        let cls = pick(self.cls_train, &cls_idx);
        director_loss(&self.arch, params, &lm, &cls, self.gamma, Some(grads), Some(rng))
    }

    fn validation_loss(&self, params: &ParamStore) -> Option<f64> {
        if self.lm_valid.is_empty() && self.cls_valid.is_empty() {
            return None;
        }
        let lm: Vec<&SeqPair> = self.lm_valid.iter().collect();
        let cls: Vec<&LabeledSeq> = self.cls_valid.iter().collect();
        Some(director_loss(&self.arch, params, &lm, &cls, self.gamma, None, None))
    }
}
