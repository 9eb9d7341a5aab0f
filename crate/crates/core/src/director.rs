//! Joint decoder-classifier: per-token labeling, joint training and blended decoding.

use std::collections::HashSet;
use std::hash::Hash;

use juicer_nn::generate::{generate, Candidate, LmScorer, StepScorer, Strategy};
use juicer_nn::infer::log_softmax;
use juicer_nn::objective::DirectorObjective;
use juicer_nn::tape::softplus;
use juicer_nn::{fit, LabeledSeq, ModelConfig, Seq2SeqModel, SeqPair, TrainConfig, TrainReport};
use juicer_nn::ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceLabel {
    Positive,
    Negative,
}

/// A target sequence with per-token class labels and loss mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLabelSequence {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub labels: Vec<u8>,
    pub mask: Vec<u8>,
    pub sequence_label: SequenceLabel,
}

impl TokenLabelSequence {
    pub fn to_labeled(&self) -> LabeledSeq {
        LabeledSeq {
            src: self.source.clone(),
            tgt: self.target.clone(),
            labels: self.labels.iter().map(|&l| l as f64).collect(),
            mask: self.mask.iter().map(|&m| m as f64).collect(),
        }
    }
}

/// Every token carries the sequence label.
pub fn label_standard(source: Vec<usize>, target: Vec<usize>, label: SequenceLabel) -> Result<TokenLabelSequence> {
    if target.is_empty() {
        return Err(CoreError::InvalidInput("cannot label an empty target".into()));
    }
    let l = (label == SequenceLabel::Positive) as u8;
    Ok(TokenLabelSequence {
        labels: vec![l; target.len()],
        mask: vec![1; target.len()],
        source,
        target,
        sequence_label: label,
    })
}

/// 1 for each token of `bad` that also occurs anywhere in `gold`, else 0.
pub fn overlap_labels<T: Eq + Hash>(bad: &[T], gold: &[T]) -> Vec<u8> {
    let bag: HashSet<&T> = gold.iter().collect();
    bad.iter().map(|t| bag.contains(t) as u8).collect()
}

/// Negative example whose tokens shared with the gold correction are relabeled positive.
pub fn label_overlap(source: Vec<usize>, bad: Vec<usize>, gold: &[usize]) -> TokenLabelSequence {
    TokenLabelSequence {
        labels: overlap_labels(&bad, gold),
        mask: vec![1; bad.len()],
        source,
        target: bad,
        sequence_label: SequenceLabel::Negative,
    }
}

/// The shipped stop-word list.
pub fn stopwords() -> HashSet<String> {
    include_str!("../data/stopwords.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

pub fn is_punctuation(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| c.is_ascii_punctuation())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapStats {
    pub overlap_fraction: f64,
    pub stopword_fraction: f64,
    pub content_fraction: f64,
    pub n_tokens: usize,
}

/// Fractions of all bad-reply tokens that overlap their gold correction, split into
/// stop-word/punctuation and content tokens.
pub fn overlap_stats(pairs: &[(Vec<String>, Vec<String>)], stop: &HashSet<String>) -> Result<OverlapStats> {
    if pairs.is_empty() {
        return Err(CoreError::InvalidInput("overlap statistics need at least one pair".into()));
    }
    let (mut n, mut sw, mut content) = (0usize, 0usize, 0usize);
    for (bad, gold) in pairs {
        for (tok, l) in bad.iter().zip(overlap_labels(bad, gold)) {
            n += 1;
            if l == 1 {
                if stop.contains(tok) || is_punctuation(tok) {
                    sw += 1;
                } else {
                    content += 1;
                }
            }
        }
    }
    let d = n.max(1) as f64;
    Ok(OverlapStats {
        overlap_fraction: (sw + content) as f64 / d,
        stopword_fraction: sw as f64 / d,
        content_fraction: content as f64 / d,
        n_tokens: n,
    })
}

/// Trains the joint model: `(1−γ)·LM + γ·token BCE`.
pub fn train_director(
    lm_examples: &[SeqPair],
    class_examples: &[TokenLabelSequence],
    gamma: f64,
    vocab_size: usize,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    valid: (&[SeqPair], &[TokenLabelSequence]),
) -> Result<(Seq2SeqModel, TrainReport)> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(CoreError::InvalidParams(format!("gamma {gamma} outside [0, 1]")));
    }
    if lm_examples.is_empty() || class_examples.is_empty() {
        return Err(CoreError::InvalidInput(
            "joint training needs positive pairs and labeled sequences".into(),
        ));
    }
    let cfg = ModelConfig {
        vocab_size,
        ..model_cfg.clone()
    };
    let mut model = Seq2SeqModel::new(cfg, train_cfg.seed, true)?;
    let labeled: Vec<LabeledSeq> = class_examples.iter().map(TokenLabelSequence::to_labeled).collect();
    let valid_labeled: Vec<LabeledSeq> = valid.1.iter().map(TokenLabelSequence::to_labeled).collect();
    let mut objective = DirectorObjective::new(model.arch(), lm_examples, &labeled, valid.0, &valid_labeled, gamma);
    let report = fit(&mut model.params, &mut objective, train_cfg)?;
    Ok((model, report))
}

/// `s(v) = log p_LM(v) + w · log σ(c(v))`.
#[derive(Debug, Clone, Copy)]
pub struct BlendScorer {
    pub weight: f64,
}

impl StepScorer for BlendScorer {
    fn score(&self, lm: ArrayView1<f64>, cls: Option<ArrayView1<f64>>) -> Vec<f64> {
        let mut s = log_softmax(lm);
        if let Some(c) = cls {
            for (v, z) in s.iter_mut().zip(c.iter()) {
                *v -= self.weight * softplus(-z);
            }
        }
        s
    }
}

/// Decodes with the blended score and returns the best candidate (`None` only for
/// an empty sample request). A zero weight is plain LM decoding.
pub fn director_decode(
    model: &Seq2SeqModel,
    source: &[usize],
    weight: f64,
    strategy: Strategy,
    max_new: usize,
) -> Result<Option<Candidate>> {
    Ok(director_candidates(model, source, weight, strategy, max_new)?.into_iter().next())
}

pub fn director_candidates(
    model: &Seq2SeqModel,
    source: &[usize],
    weight: f64,
    strategy: Strategy,
    max_new: usize,
) -> Result<Vec<Candidate>> {
    if !(weight >= 0.0) {
        return Err(CoreError::InvalidParams(format!("blend weight {weight} must be nonnegative")));
    }
    let out = if weight == 0.0 || !model.has_class_head() {
        generate(model, source, strategy, max_new, &LmScorer)?
    } else {
        generate(model, source, strategy, max_new, &BlendScorer { weight })?
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn standard_labels_are_uniform() {
        let p = label_standard(vec![4], vec![5, 6, 7, 8, 9], SequenceLabel::Positive).unwrap();
        assert_eq!(p.labels, vec![1; 5]);
        let n = label_standard(vec![4], vec![5, 6, 7], SequenceLabel::Negative).unwrap();
        assert_eq!(n.labels, vec![0; 3]);
        assert_eq!(n.mask.len(), n.target.len());
        assert!(label_standard(vec![4], vec![], SequenceLabel::Positive).is_err());
    }

    #[test]
    fn overlap_labels_follow_the_bag_rule() {
        let bad = toks("i like watermelons too ! have you heard of harry styles ?");
        let gold = toks("i like watermelons too ! they taste great in drinks .");
        assert_eq!(overlap_labels(&bad, &gold), vec![1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(overlap_labels(&bad, &bad), vec![1; bad.len()]);
        assert_eq!(overlap_labels(&toks("a b"), &toks("c d")), vec![0, 0]);
    }

    #[test]
    fn overlap_stats_split_sums_to_total() {
        let stop = stopwords();
        assert_eq!(stop.len(), 30);
        let pairs = vec![
            (toks("the color of bazu is red ."), toks("the color of bazu is blue .")),
            (toks("i like tea ."), toks("the size of kavo is big .")),
        ];
        let s = overlap_stats(&pairs, &stop).unwrap();
        assert_eq!(s.n_tokens, 11);
        // overlapping: the color of bazu is . (6) + . (1)
        assert!((s.overlap_fraction - 7.0 / 11.0).abs() < 1e-12);
        assert!((s.stopword_fraction - 5.0 / 11.0).abs() < 1e-12);
        assert!((s.overlap_fraction - s.stopword_fraction - s.content_fraction).abs() < 1e-9);
        let same = overlap_stats(&[(toks("x y"), toks("y x"))], &stop).unwrap();
        assert_eq!(same.overlap_fraction, 1.0);
        assert!(overlap_stats(&[], &stop).is_err());
    }

    #[test]
    fn negative_blend_weight_is_rejected() {
        let cfg = ModelConfig {
            vocab_size: 8,
            model_dim: 8,
            n_heads: 2,
            ffn_dim: 8,
            max_len: 8,
            n_layers: 1,
            dropout: 0.0,
        };
        let m = Seq2SeqModel::new(cfg, 1, true).unwrap();
        assert!(director_decode(&m, &[4], -1.0, Strategy::Greedy, 4).is_err());
    }

    #[test]
    fn gamma_outside_unit_interval_is_rejected() {
        let pos = vec![SeqPair { src: vec![4], tgt: vec![5] }];
        let neg = vec![label_standard(vec![4], vec![6], SequenceLabel::Negative).unwrap()];
        let r = train_director(&pos, &neg, 1.5, 8, &ModelConfig::default(), &TrainConfig::default(), (&[], &[]));
        assert!(r.is_err());
    }
}
