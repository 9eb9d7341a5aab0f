use std::collections::{BTreeMap, HashMap};

use juicer_nn::embed::Embedder;
use juicer_nn::objective::LmObjective;
use juicer_nn::{fit, ModelConfig, Seq2SeqModel, SeqPair, TrainConfig, TrainReport, Vocab};
use serde::{Deserialize, Serialize};

use super::config::{ArmConfig, ArmData, FinalObjective};
use crate::corpus::{Conversation, Label, Turn};
use crate::dialogue::{dialogue_source, DecodeConfig, DialogueModel};
use crate::director::{label_overlap, label_standard, train_director, SequenceLabel, TokenLabelSequence};
use crate::satisfaction::ReplyJudge;
use crate::text::target;
use crate::{CoreError, Result};

/// `cosine(embed(feedback), embed(next bot reply)) ≥ threshold`.
pub fn correctable_filter(embedder: &dyn Embedder, feedback: &str, next_bot_reply: &str, threshold: f64) -> bool {
    embedder.similarity(feedback, next_bot_reply) >= threshold
}

/// Similarity used by the filter for bad turn `i`: its feedback against the next bot
/// reply, 0 when either is missing.
pub fn feedback_similarity(embedder: &dyn Embedder, conv: &Conversation, i: usize) -> f64 {
    let Some(fb) = conv.feedback_after(i) else { return 0.0 };
    match conv.turns.get(i + 2) {
        Some(next) if next.is_bot() => embedder.similarity(&fb.text, &next.text),
        _ => 0.0,
    }
}

/// Threshold letting through at least `pass_rate` of the given scores: the
/// `ceil(pass_rate · n)`-th largest score. No scores gives −1.
pub fn calibrate_threshold(scores: &[f64], pass_rate: f64) -> f64 {
    if scores.is_empty() {
        return -1.0;
    }
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let k = ((pass_rate * s.len() as f64).ceil() as usize).clamp(1, s.len());
    s[k - 1]
}

/// Index of the highest score (lowest index on ties), or `None` when every score is
/// below 0.5.
pub fn rerank_by_scores(scores: &[f64]) -> Result<Option<usize>> {
    if scores.is_empty() {
        return Err(CoreError::InvalidInput("cannot rerank an empty candidate list".into()));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok((scores[best] >= 0.5).then_some(best))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reranked {
    pub index: usize,
    pub text: String,
    pub prob: f64,
}

/// Scores each candidate after `context` with the judge and keeps the best, or
/// returns `None` (skip) when all are predicted bad.
pub fn rerank_corrections(candidates: &[String], context: &[Turn], judge: &dyn ReplyJudge) -> Result<Option<Reranked>> {
    let mut cache: HashMap<&str, f64> = HashMap::new();
    let scores: Vec<f64> = candidates
        .iter()
        .map(|c| *cache.entry(c.as_str()).or_insert_with(|| judge.prob(context, c, None)))
        .collect();
    Ok(rerank_by_scores(&scores)?.map(|i| Reranked {
        index: i,
        text: candidates[i].clone(),
        prob: scores[i],
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedCorrection {
    pub conversation_id: String,
    pub turn_index: usize,
    pub similarity: f64,
    pub correctable: bool,
    pub n_candidates: usize,
    /// `None` when every candidate was predicted bad.
    pub correction: Option<Reranked>,
}

pub type CorrectionMap = BTreeMap<(String, usize), PredictedCorrection>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    HumanUp,
    PredGood,
    GoldCorrection,
    PredictedCorrection,
    FeedbackText,
    HumanDown,
    PredBad,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::HumanUp => "human_up",
            Provenance::PredGood => "pred_good",
            Provenance::GoldCorrection => "gold_correction",
            Provenance::PredictedCorrection => "predicted_correction",
            Provenance::FeedbackText => "feedback_text",
            Provenance::HumanDown => "human_down",
            Provenance::PredBad => "pred_bad",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPair {
    pub conversation_id: String,
    pub turn_index: usize,
    pub context: Vec<String>,
    pub reply: String,
    pub provenance: Provenance,
    /// For negatives: the correction of this reply, when one is known.
    pub correction: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentedDataset {
    pub positives: Vec<AugmentedPair>,
    pub negatives: Vec<AugmentedPair>,
}

impl AugmentedDataset {
    pub fn provenance_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for p in self.positives.iter().chain(&self.negatives) {
            *out.entry(p.provenance.as_str().to_string()).or_default() += 1;
        }
        out
    }
}

/// Assembles an arm's final-model training data from a labeled corpus.
pub fn build_augmented(corpus: &[Conversation], corrections: &CorrectionMap, arm: &ArmConfig) -> AugmentedDataset {
    let mut ds = AugmentedDataset::default();
    for conv in corpus {
        for i in conv.bot_indices() {
            let t = &conv.turns[i];
            let pair = |reply: &str, provenance, correction: Option<String>| AugmentedPair {
                conversation_id: conv.conversation_id.clone(),
                turn_index: i,
                context: conv.turns[..i].iter().map(|t| t.text.clone()).collect(),
                reply: reply.to_string(),
                provenance,
                correction,
            };
            let predicted = || {
                corrections
                    .get(&(conv.conversation_id.clone(), i))
                    .filter(|c| c.correctable || !arm.correctable_filter)
                    .and_then(|c| c.correction.as_ref())
                    .map(|c| c.text.clone())
            };
            match t.label() {
                Label::HumanUp => ds.positives.push(pair(&t.text, Provenance::HumanUp, None)),
                Label::HumanDown => {
                    let gold = t.gold_correction.clone();
                    if let Some(g) = &gold {
                        ds.positives.push(pair(g, Provenance::GoldCorrection, None));
                    }
                    if arm.data == ArmData::FeedbackText {
                        if let Some(fb) = conv.feedback_after(i) {
                            let mut p = pair(&fb.text, Provenance::FeedbackText, None);
                            p.context.push(t.text.clone());
                            ds.positives.push(p);
                        }
                    }
                    ds.negatives.push(pair(&t.text, Provenance::HumanDown, gold));
                }
                Label::PredGood if arm.data == ArmData::Juicer && arm.pred_good => {
                    ds.positives.push(pair(&t.text, Provenance::PredGood, None))
                }
                Label::PredBad if arm.data == ArmData::Juicer => {
                    let fix = if arm.predicted_corrections { predicted() } else { None };
                    if let Some(c) = &fix {
                        ds.positives.push(pair(c, Provenance::PredictedCorrection, None));
                    }
                    ds.negatives.push(pair(&t.text, Provenance::PredBad, fix));
                }
                _ => {}
            }
        }
    }
    ds
}

fn lm_pair(vocab: &Vocab, p: &AugmentedPair, max_len: usize) -> SeqPair {
    let ctx: Vec<&str> = p.context.iter().map(String::as_str).collect();
    SeqPair {
        src: dialogue_source(vocab, &ctx, max_len),
        tgt: target(vocab, &p.reply, max_len),
    }
}

fn usable(p: &SeqPair) -> bool {
    !p.src.is_empty() && !p.tgt.is_empty()
}

fn class_seqs(
    ds: &AugmentedDataset,
    vocab: &Vocab,
    overlap: bool,
    max_len: usize,
) -> Result<Vec<TokenLabelSequence>> {
    let mut out = Vec::new();
    for p in &ds.positives {
        let sp = lm_pair(vocab, p, max_len);
        if usable(&sp) {
            out.push(label_standard(sp.src, sp.tgt, SequenceLabel::Positive)?);
        }
    }
    for n in &ds.negatives {
        let sp = lm_pair(vocab, n, max_len);
        if !usable(&sp) {
            continue;
        }
        // only human-written corrections drive overlap labels
        let gold = n.correction.as_ref().filter(|_| overlap && n.provenance == Provenance::HumanDown);
        out.push(match gold {
            Some(c) => label_overlap(sp.src, sp.tgt, &vocab.encode(c)),
            _ => label_standard(sp.src, sp.tgt, SequenceLabel::Negative)?,
        });
    }
    Ok(out)
}

pub struct FinalTraining<'a> {
    pub vocab: &'a Vocab,
    pub objective: FinalObjective,
    pub gamma: f64,
    pub decode: DecodeConfig,
    pub model: &'a ModelConfig,
    pub train: &'a TrainConfig,
    pub valid: &'a AugmentedDataset,
}

/// Retrains the dialogue model on an augmented dataset.
pub fn train_final(ds: &AugmentedDataset, t: &FinalTraining) -> Result<(DialogueModel, TrainReport)> {
    let max_len = t.model.max_len;
    let pos: Vec<SeqPair> = ds.positives.iter().map(|p| lm_pair(t.vocab, p, max_len)).filter(usable).collect();
    if pos.is_empty() {
        return Err(CoreError::InvalidInput("final training needs at least one positive reply".into()));
    }
    let valid_pos: Vec<SeqPair> = t.valid.positives.iter().map(|p| lm_pair(t.vocab, p, max_len)).filter(usable).collect();
    let mcfg = ModelConfig {
        vocab_size: t.vocab.len(),
        ..t.model.clone()
    };
    let (model, report, decode) = match t.objective {
        FinalObjective::StandardLm => {
            let mut model = Seq2SeqModel::new(mcfg, t.train.seed, false)?;
            let mut objective = LmObjective::new(model.arch(), &pos, &valid_pos);
            let report = fit(&mut model.params, &mut objective, t.train)?;
            let decode = DecodeConfig {
                blend_weight: 0.0,
                ..t.decode
            };
            (model, report, decode)
        }
        FinalObjective::Director | FinalObjective::DirectorOverlap => {
            if ds.negatives.is_empty() {
                return Err(CoreError::InvalidInput(
                    "the joint objective needs negative replies, found none".into(),
                ));
            }
            let overlap = t.objective == FinalObjective::DirectorOverlap;
            let cls = class_seqs(ds, t.vocab, overlap, max_len)?;
            let valid_cls = class_seqs(t.valid, t.vocab, overlap, max_len)?;
            let (model, report) =
                train_director(&pos, &cls, t.gamma, t.vocab.len(), &mcfg, t.train, (&valid_pos, &valid_cls))?;
            (model, report, t.decode)
        }
    };
    Ok((
        DialogueModel {
            model,
            vocab: t.vocab.clone(),
            decode,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ErrorMode;
    use crate::satisfaction::FnJudge;

    #[test]
    fn rerank_hand_cases() {
        assert_eq!(rerank_by_scores(&[0.9]).unwrap(), Some(0));
        assert_eq!(rerank_by_scores(&[0.3, 0.3, 0.3]).unwrap(), None);
        assert_eq!(rerank_by_scores(&[0.2, 0.7, 0.7]).unwrap(), Some(1));
        assert_eq!(rerank_by_scores(&[0.5]).unwrap(), Some(0));
        assert!(rerank_by_scores(&[]).is_err());
    }

    #[test]
    fn rerank_uses_the_judge() {
        let judge = FnJudge(|_: &[Turn], r: &str, _: Option<&str>| if r == "good" { 0.8 } else { 0.1 });
        let c = vec!["bad".to_string(), "good".to_string()];
        let r = rerank_corrections(&c, &[], &judge).unwrap().unwrap();
        assert_eq!((r.index, r.text.as_str()), (1, "good"));
    }

    #[test]
    fn calibration_hits_the_pass_rate() {
        let scores: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let t = calibrate_threshold(&scores, 0.62);
        let pass = scores.iter().filter(|&&s| s >= t).count();
        assert_eq!(pass, 62);
        assert_eq!(calibrate_threshold(&[], 0.5), -1.0);
    }

    fn labeled() -> Conversation {
        let mut bad = Turn::bot("i like tea .", Label::HumanDown, ErrorMode::Irrelevant);
        bad.gold_correction = Some("the color of bazu is blue .".into());
        Conversation {
            conversation_id: "c".into(),
            topic: "bazu".into(),
            turns: vec![
                Turn::human("what is the color of bazu ?", false),
                bad,
                Turn::human("that is not right .", true),
                Turn::bot("the color of bazu is red .", Label::PredBad, ErrorMode::WrongValue),
                Turn::human("hmm , no .", true),
                Turn::bot("the color of bazu is blue .", Label::PredGood, ErrorMode::None),
            ],
        }
    }

    #[test]
    fn augmented_provenance_follows_labels() {
        let conv = labeled();
        let mut map = CorrectionMap::new();
        map.insert(
            ("c".into(), 3),
            PredictedCorrection {
                conversation_id: "c".into(),
                turn_index: 3,
                similarity: 0.1,
                correctable: false,
                n_candidates: 2,
                correction: Some(Reranked {
                    index: 0,
                    text: "the color of bazu is blue .".into(),
                    prob: 0.9,
                }),
            },
        );
        let full = build_augmented(&[conv.clone()], &map, &ArmConfig::without_correctable_filter());
        let counts = full.provenance_counts();
        assert_eq!(counts["gold_correction"], 1);
        assert_eq!(counts["predicted_correction"], 1);
        assert_eq!(counts["pred_good"], 1);
        assert_eq!(full.negatives.len(), 2);
        assert_eq!(full.positives.len() + full.negatives.len(), 3 + 2);

        let filtered = build_augmented(&[conv.clone()], &map, &ArmConfig::juicer());
        assert!(!filtered.provenance_counts().contains_key("predicted_correction"));
        let base = build_augmented(&[conv], &map, &ArmConfig::baseline());
        assert_eq!(base.positives.len(), 1);
        assert_eq!(base.negatives.len(), 1);
    }
}
