//! Satisfaction classifier: dataset construction in two input variants, training
//! with inverse-frequency weighting, pseudo-labeling and binary metrics.

use std::path::Path;
use std::str::FromStr;

use juicer_nn::checkpoint::Checkpoint;
use juicer_nn::objective::ClassifierObjective;
use juicer_nn::{fit, ClassExample, EncoderClassifier, ModelConfig, TrainConfig, TrainReport, Vocab};
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Label, Oracle, Turn};
use crate::text::pack;
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierVariant {
    /// context ⊕ bot reply
    ContextBot,
    /// context ⊕ bot reply ⊕ next human turn
    ContextBotHuman,
}

impl FromStr for ClassifierVariant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "context_bot" => Ok(ClassifierVariant::ContextBot),
            "context_bot_human" => Ok(ClassifierVariant::ContextBotHuman),
            _ => Err(CoreError::InvalidInput(format!("unknown classifier variant {s:?}"))),
        }
    }
}

impl ClassifierVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierVariant::ContextBot => "context_bot",
            ClassifierVariant::ContextBotHuman => "context_bot_human",
        }
    }
}

/// Model input for judging `reply` after `context`. The next human turn is used only
/// by the three-segment variant, which falls back to two segments without one.
pub fn judge_input(
    vocab: &Vocab,
    variant: ClassifierVariant,
    context: &[Turn],
    reply: &str,
    next_human: Option<&str>,
    max_len: usize,
) -> Vec<usize> {
    let ctx: Vec<&str> = context.iter().map(|t| t.text.as_str()).collect();
    let mut tail = vec![reply];
    if variant == ClassifierVariant::ContextBotHuman {
        tail.extend(next_human);
    }
    pack(vocab, &[], &ctx, &tail, max_len)
}

fn next_human(conv: &Conversation, i: usize) -> Option<&str> {
    conv.turns.get(i + 1).map(|t| t.text.as_str())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierExample {
    pub input: Vec<usize>,
    /// 1 for a human thumbs-up, 0 for a thumbs-down.
    pub label: u8,
    pub conversation_id: String,
    pub turn_index: usize,
}

/// One example per human-labeled bot turn; all other turns are skipped.
pub fn build_classifier_set(
    corpus: &[Conversation],
    variant: ClassifierVariant,
    vocab: &Vocab,
    max_len: usize,
) -> Vec<ClassifierExample> {
    let mut out = Vec::new();
    for conv in corpus {
        for i in conv.bot_indices() {
            let turn = &conv.turns[i];
            let label = match turn.label() {
                Label::HumanUp => 1,
                Label::HumanDown => 0,
                _ => continue,
            };
            out.push(ClassifierExample {
                input: judge_input(vocab, variant, &conv.turns[..i], &turn.text, next_human(conv, i), max_len),
                label,
                conversation_id: conv.conversation_id.clone(),
                turn_index: i,
            });
        }
    }
    out
}

/// Weights each class by `N / (2 · N_class)`.
pub fn weighted_examples(examples: &[ClassifierExample]) -> Vec<ClassExample> {
    let n = examples.len() as f64;
    let pos = examples.iter().filter(|e| e.label == 1).count() as f64;
    let neg = n - pos;
    examples
        .iter()
        .map(|e| {
            let count = if e.label == 1 { pos } else { neg };
            ClassExample {
                input: e.input.clone(),
                label: e.label as f64,
                weight: n / (2.0 * count),
            }
        })
        .collect()
}

/// Scores how likely a reply is to satisfy the user, in `[0, 1]`.
pub trait ReplyJudge: Sync {
    fn prob(&self, context: &[Turn], reply: &str, next_human: Option<&str>) -> f64;
}

impl ReplyJudge for Oracle {
    fn prob(&self, context: &[Turn], reply: &str, _next_human: Option<&str>) -> f64 {
        if self.judge(context, reply) {
            1.0
        } else {
            0.0
        }
    }
}

/// Adapts a closure into a judge (handy for stubs).
pub struct FnJudge<F>(pub F);

impl<F> ReplyJudge for FnJudge<F>
where
    F: Fn(&[Turn], &str, Option<&str>) -> f64 + Sync,
{
    fn prob(&self, context: &[Turn], reply: &str, next_human: Option<&str>) -> f64 {
        (self.0)(context, reply, next_human)
    }
}

#[derive(Debug, Clone)]
pub struct SatisfactionClassifier {
    pub model: EncoderClassifier,
    pub vocab: Vocab,
    pub variant: ClassifierVariant,
}

impl ReplyJudge for SatisfactionClassifier {
    fn prob(&self, context: &[Turn], reply: &str, next: Option<&str>) -> f64 {
        let input = judge_input(&self.vocab, self.variant, context, reply, next, self.model.cfg.max_len);
        if input.is_empty() {
            return 0.5;
        }
        self.model.prob(&input).expect("packed input fits the model")
    }
}

impl SatisfactionClassifier {
    pub fn prob_ids(&self, input: &[usize]) -> Result<f64> {
        Ok(self.model.prob(input)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({ "variant": self.variant });
        Checkpoint::from_classifier(&self.model, &self.vocab, meta).save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let variant = serde_json::from_value(ck.meta.get("variant").cloned().unwrap_or_default())
            .map_err(|e| CoreError::InvalidInput(format!("classifier checkpoint lacks a variant: {e}")))?;
        let (model, vocab) = ck.into_classifier()?;
        Ok(SatisfactionClassifier { model, vocab, variant })
    }
}

/// Trains an encoder classifier on human-labeled examples.
pub fn train_satisfaction(
    train: &[ClassifierExample],
    valid: &[ClassifierExample],
    variant: ClassifierVariant,
    vocab: &Vocab,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(SatisfactionClassifier, TrainReport)> {
    let pos = train.iter().filter(|e| e.label == 1).count();
    if pos == 0 || pos == train.len() {
        return Err(CoreError::InvalidInput(
            "satisfaction training needs both good and bad examples".into(),
        ));
    }
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        ..model_cfg.clone()
    };
    let mut model = EncoderClassifier::new(cfg, train_cfg.seed)?;
    let train_w = weighted_examples(train);
    let valid_has_both = valid.iter().any(|e| e.label == 1) && valid.iter().any(|e| e.label == 0);
    let valid_w = if valid_has_both { weighted_examples(valid) } else { Vec::new() };
    let mut objective = ClassifierObjective::new(model.arch(), &train_w, &valid_w);
    let report = fit(&mut model.params, &mut objective, train_cfg)?;
    Ok((
        SatisfactionClassifier {
            model,
            vocab: vocab.clone(),
            variant,
        },
        report,
    ))
}

/// Replaces every `unlabeled` bot turn with `pred_good` (score ≥ threshold) or
/// `pred_bad`. Human labels and existing predictions are left untouched.
pub fn label_missing(corpus: &[Conversation], judge: &dyn ReplyJudge, threshold: f64) -> Vec<Conversation> {
    let mut out = corpus.to_vec();
    for conv in out.iter_mut() {
        let idx: Vec<usize> = conv.bot_indices().collect();
        for i in idx {
            if conv.turns[i].label() != Label::Unlabeled {
                continue;
            }
            let p = judge.prob(&conv.turns[..i], &conv.turns[i].text, next_human(conv, i));
            conv.turns[i].label = Some(if p >= threshold { Label::PredGood } else { Label::PredBad });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub balanced_accuracy: f64,
    pub balanced_f1: f64,
    pub n: usize,
}

struct Confusion {
    tp: f64,
    fp: f64,
    tn: f64,
    fn_: f64,
}

fn confusion(preds: &[bool], golds: &[bool]) -> Result<Confusion> {
    if preds.len() != golds.len() {
        return Err(CoreError::InvalidInput("predictions and golds differ in length".into()));
    }
    if !golds.contains(&true) || !golds.contains(&false) {
        return Err(CoreError::InvalidInput("both classes must be present in golds".into()));
    }
    let mut c = Confusion {
        tp: 0.0,
        fp: 0.0,
        tn: 0.0,
        fn_: 0.0,
    };
    for (&p, &g) in preds.iter().zip(golds) {
        match (p, g) {
            (true, true) => c.tp += 1.0,
            (true, false) => c.fp += 1.0,
            (false, false) => c.tn += 1.0,
            (false, true) => c.fn_ += 1.0,
        }
    }
    Ok(c)
}

/// Mean of per-class recall.
pub fn balanced_accuracy(preds: &[bool], golds: &[bool]) -> Result<f64> {
    let c = confusion(preds, golds)?;
    Ok(0.5 * (c.tp / (c.tp + c.fn_) + c.tn / (c.tn + c.fp)))
}

fn f1(tp: f64, fp: f64, fn_: f64) -> f64 {
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

/// Unweighted mean of the two per-class F1 scores (macro F1).
pub fn balanced_f1(preds: &[bool], golds: &[bool]) -> Result<f64> {
    let c = confusion(preds, golds)?;
    Ok(0.5 * (f1(c.tp, c.fp, c.fn_) + f1(c.tn, c.fn_, c.fp)))
}

pub fn evaluate_classifier(
    clf: &SatisfactionClassifier,
    examples: &[ClassifierExample],
    threshold: f64,
) -> Result<ClassifierMetrics> {
    let mut preds = Vec::with_capacity(examples.len());
    let mut golds = Vec::with_capacity(examples.len());
    for e in examples {
        preds.push(clf.prob_ids(&e.input)? >= threshold);
        golds.push(e.label == 1);
    }
    Ok(ClassifierMetrics {
        balanced_accuracy: balanced_accuracy(&preds, &golds)?,
        balanced_f1: balanced_f1(&preds, &golds)?,
        n: examples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corpus_stats, generate_corpus, generate_world, sparsify, CorpusParams};
    use crate::text::build_vocab;

    #[test]
    fn hand_computed_metrics() {
        let p = [true, true, false, false];
        let g = [true, false, true, false];
        assert_eq!(balanced_accuracy(&p, &g).unwrap(), 0.5);
        assert_eq!(balanced_f1(&p, &g).unwrap(), 0.5);
        assert_eq!(balanced_accuracy(&g, &g).unwrap(), 1.0);
        assert_eq!(balanced_f1(&g, &g).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&[true; 4], &g).unwrap(), 0.5);
    }

    #[test]
    fn metrics_reject_single_class_golds() {
        assert!(balanced_accuracy(&[true, false], &[true, true]).is_err());
        assert!(balanced_f1(&[true], &[true, false]).is_err());
    }

    #[test]
    fn class_swap_preserves_balanced_accuracy() {
        let p = [true, false, false, true, true, false, true];
        let g = [true, true, false, false, true, false, false];
        let np: Vec<bool> = p.iter().map(|x| !x).collect();
        let ng: Vec<bool> = g.iter().map(|x| !x).collect();
        assert_eq!(balanced_accuracy(&p, &g).unwrap(), balanced_accuracy(&np, &ng).unwrap());
        assert_eq!(balanced_f1(&p, &g).unwrap(), balanced_f1(&np, &ng).unwrap());
    }

    fn setup() -> (crate::corpus::WorldSpec, Vec<Conversation>) {
        let w = generate_world(2, 10, 3).unwrap();
        let c = generate_corpus(&w, 3, &CorpusParams::new(60, 4, 0.4, 0.5)).unwrap();
        (w, c)
    }

    #[test]
    fn unlabeled_corpus_gives_no_examples() {
        let (w, c) = setup();
        let mut none = c.clone();
        for t in none.iter_mut().flat_map(|c| c.turns.iter_mut()).filter(|t| t.is_bot()) {
            t.label = Some(Label::Unlabeled);
            t.gold_correction = None;
        }
        assert!(build_classifier_set(&none, ClassifierVariant::ContextBot, &build_vocab(&w), 48).is_empty());
    }

    #[test]
    fn three_segment_inputs_carry_feedback_after_bad_replies() {
        let (w, c) = setup();
        let v = build_vocab(&w);
        let set = build_classifier_set(&c, ClassifierVariant::ContextBotHuman, &v, 64);
        let by_id: std::collections::HashMap<_, _> = c.iter().map(|c| (c.conversation_id.clone(), c)).collect();
        let mut checked = 0;
        for ex in &set {
            let conv = by_id[&ex.conversation_id];
            assert!(ex.input.len() <= 64);
            if ex.label == 0 {
                let fb = v.encode(&conv.turns[ex.turn_index + 1].text);
                assert!(ex.input.ends_with(&fb));
                checked += 1;
            }
        }
        assert!(checked > 0);
        let two = build_classifier_set(&c, ClassifierVariant::ContextBot, &v, 64);
        assert_eq!(two.len(), set.len());
    }

    #[test]
    fn oracle_judge_recovers_ground_truth() {
        let (w, c) = setup();
        let sparse = sparsify(&c, 0.2, 1).unwrap();
        let oracle = Oracle::new(&w);
        let labeled = label_missing(&sparse, &oracle, 0.5);
        let stats = corpus_stats(&labeled);
        assert_eq!(stats.label_count(Label::Unlabeled), 0);
        assert!(stats.label_count(Label::PredGood) > 0 && stats.label_count(Label::PredBad) > 0);
        for (orig, new) in c.iter().zip(&labeled) {
            for (a, b) in orig.turns.iter().zip(&new.turns).filter(|(a, _)| a.is_bot()) {
                assert_eq!(a.label().is_good(), b.label().is_good());
            }
        }
        // idempotent, human labels untouched
        assert_eq!(label_missing(&labeled, &FnJudge(|_: &[Turn], _: &str, _: Option<&str>| 0.0), 0.5), labeled);
        assert_eq!(label_missing(&c, &oracle, 0.5), c);
    }

    #[test]
    fn single_class_training_is_rejected() {
        let (w, _) = setup();
        let v = build_vocab(&w);
        let ex = vec![ClassifierExample {
            input: vec![5, 6],
            label: 1,
            conversation_id: "x".into(),
            turn_index: 1,
        }];
        let cfg = ModelConfig {
            model_dim: 8,
            n_heads: 2,
            ffn_dim: 8,
            max_len: 8,
            ..ModelConfig::default()
        };
        let r = train_satisfaction(&ex, &[], ClassifierVariant::ContextBot, &v, &cfg, &TrainConfig::default());
        assert!(r.is_err());
    }

    #[test]
    fn weights_balance_classes() {
        let mk = |label| ClassifierExample {
            input: vec![4],
            label,
            conversation_id: String::new(),
            turn_index: 0,
        };
        let w = weighted_examples(&[mk(1), mk(1), mk(1), mk(0)]);
        let pos: f64 = w.iter().filter(|e| e.label == 1.0).map(|e| e.weight).sum();
        let neg: f64 = w.iter().filter(|e| e.label == 0.0).map(|e| e.weight).sum();
        assert!((pos - neg).abs() < 1e-12);
    }
}
