//! Reply corrector: correction pairs from gold and self-corrections, multitask
//! training and candidate generation.

use std::path::Path;
use std::str::FromStr;

use juicer_nn::checkpoint::Checkpoint;
use juicer_nn::generate::{generate, LmScorer, Strategy};
use juicer_nn::objective::LmObjective;
use juicer_nn::sampler::WeightedPools;
use juicer_nn::{fit, ModelConfig, Seq2SeqModel, SeqPair, TrainConfig, TrainReport, Vocab};
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Label};
use crate::director::{director_candidates, label_standard, train_director, SequenceLabel};
use crate::eval::f1_overlap;
use crate::text::{pack, target, TASK_CORRECT, TASK_DIALOGUE, TASK_FEEDBACK};
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionSource {
    Gold,
    #[serde(rename = "self")]
    SelfCorrection,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionExample {
    pub conversation_id: String,
    /// Index of the bad bot turn.
    pub turn_index: usize,
    pub context: Vec<String>,
    pub bad_reply: String,
    pub feedback: Option<String>,
    pub target: String,
    pub source: CorrectionSource,
}

fn context_of(conv: &Conversation, i: usize) -> Vec<String> {
    conv.turns[..i].iter().map(|t| t.text.clone()).collect()
}

fn feedback_of(conv: &Conversation, i: usize) -> Option<String> {
    conv.feedback_after(i).map(|t| t.text.clone())
}

/// One example per thumbs-down turn that still carries its gold correction.
pub fn build_gold_pairs(corpus: &[Conversation]) -> Vec<CorrectionExample> {
    let mut out = Vec::new();
    for conv in corpus {
        for i in conv.bot_indices() {
            let t = &conv.turns[i];
            let Some(gold) = &t.gold_correction else { continue };
            if t.label() != Label::HumanDown {
                continue;
            }
            out.push(CorrectionExample {
                conversation_id: conv.conversation_id.clone(),
                turn_index: i,
                context: context_of(conv, i),
                bad_reply: t.text.clone(),
                feedback: feedback_of(conv, i),
                target: gold.clone(),
                source: CorrectionSource::Gold,
            });
        }
    }
    out
}

/// One example per (bad turn, feedback turn, good next bot turn) triple.
pub fn build_self_pairs(corpus: &[Conversation]) -> Vec<CorrectionExample> {
    let mut out = Vec::new();
    for conv in corpus {
        for i in conv.bot_indices() {
            if conv.turns[i].label().is_good() != Some(false) {
                continue;
            }
            let Some(fb) = conv.feedback_after(i) else { continue };
            let Some(next) = conv.turns.get(i + 2) else { continue };
            if !next.is_bot() || next.label().is_good() != Some(true) {
                continue;
            }
            out.push(CorrectionExample {
                conversation_id: conv.conversation_id.clone(),
                turn_index: i,
                context: context_of(conv, i),
                bad_reply: conv.turns[i].text.clone(),
                feedback: Some(fb.text.clone()),
                target: next.text.clone(),
                source: CorrectionSource::SelfCorrection,
            });
        }
    }
    out
}

/// Relative sampling weights of the three training tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultitaskMix {
    pub correction: f64,
    pub feedback_prediction: f64,
    pub dialogue: f64,
}

impl Default for MultitaskMix {
    fn default() -> Self {
        MultitaskMix {
            correction: 2.0,
            feedback_prediction: 1.0,
            dialogue: 1.0,
        }
    }
}

impl MultitaskMix {
    pub fn validate(&self) -> Result<()> {
        let w = self.weights();
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(CoreError::InvalidParams(format!(
                "multitask weights must be nonnegative with a positive sum, got {w:?}"
            )));
        }
        Ok(())
    }

    pub fn weights(&self) -> [f64; 3] {
        [self.correction, self.feedback_prediction, self.dialogue]
    }
}

impl FromStr for MultitaskMix {
    type Err = CoreError;

    /// Parses `correction:feedback:dialogue`, e.g. `2:1:1`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CoreError::InvalidParams(format!("bad multitask mix {s:?}: {e}")))?;
        let [correction, feedback_prediction, dialogue] = parts[..] else {
            return Err(CoreError::InvalidParams(format!("multitask mix {s:?} needs three weights")));
        };
        let mix = MultitaskMix {
            correction,
            feedback_prediction,
            dialogue,
        };
        mix.validate()?;
        Ok(mix)
    }
}

/// Auxiliary examples: (context, bad reply) → feedback, and context → good reply.
#[derive(Debug, Clone, Default)]
pub struct AuxTasks {
    pub feedback: Vec<(Vec<String>, String, String)>,
    pub dialogue: Vec<(Vec<String>, String)>,
}

pub fn build_aux_tasks(corpus: &[Conversation]) -> AuxTasks {
    let mut aux = AuxTasks::default();
    for conv in corpus {
        for i in conv.bot_indices() {
            let t = &conv.turns[i];
            if let Some(fb) = conv.feedback_after(i) {
                aux.feedback.push((context_of(conv, i), t.text.clone(), fb.text.clone()));
            }
            if t.label().is_good() == Some(true) {
                aux.dialogue.push((context_of(conv, i), t.text.clone()));
            }
        }
    }
    aux
}

pub fn correction_input(
    vocab: &Vocab,
    context: &[String],
    bad_reply: &str,
    feedback: Option<&str>,
    use_feedback: bool,
    max_len: usize,
) -> Vec<usize> {
    let ctx: Vec<&str> = context.iter().map(String::as_str).collect();
    let mut tail = vec![bad_reply];
    if use_feedback {
        tail.extend(feedback);
    }
    pack(vocab, &[TASK_CORRECT], &ctx, &tail, max_len)
}

fn feedback_input(vocab: &Vocab, context: &[String], reply: &str, max_len: usize) -> Vec<usize> {
    let ctx: Vec<&str> = context.iter().map(String::as_str).collect();
    pack(vocab, &[TASK_FEEDBACK], &ctx, &[reply], max_len)
}

fn dialogue_task_input(vocab: &Vocab, context: &[String], max_len: usize) -> Vec<usize> {
    let ctx: Vec<&str> = context.iter().map(String::as_str).collect();
    pack(vocab, &[TASK_DIALOGUE], &ctx, &[], max_len)
}

/// How the corrector's source sequence is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectorPrompt {
    /// Task-tagged correction input (context, bad reply, feedback).
    Correction,
    /// A plain dialogue model used as the corrector: context only.
    Dialogue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectorConfig {
    pub mix: MultitaskMix,
    pub use_feedback: bool,
    /// When set, the corrector is trained jointly with a token classifier that
    /// sees bad replies as negatives, with this loss weight.
    pub director_gamma: Option<f64>,
    pub blend_weight: f64,
    pub temperature: f64,
    pub max_new: usize,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        CorrectorConfig {
            mix: MultitaskMix::default(),
            use_feedback: true,
            director_gamma: None,
            blend_weight: 0.0,
            temperature: 1.0,
            max_new: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corrector {
    pub model: Seq2SeqModel,
    pub vocab: Vocab,
    pub prompt: CorrectorPrompt,
    pub use_feedback: bool,
    pub blend_weight: f64,
    pub temperature: f64,
    pub max_new: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorrectorMeta {
    prompt: CorrectorPrompt,
    use_feedback: bool,
    blend_weight: f64,
    temperature: f64,
    max_new: usize,
}

impl Corrector {
    /// Wraps a plain dialogue model as a context-only corrector.
    pub fn from_dialogue_model(model: Seq2SeqModel, vocab: Vocab, max_new: usize) -> Self {
        Corrector {
            model,
            vocab,
            prompt: CorrectorPrompt::Dialogue,
            use_feedback: false,
            blend_weight: 0.0,
            temperature: 1.0,
            max_new,
        }
    }

    pub fn source(&self, context: &[String], bad_reply: &str, feedback: Option<&str>) -> Vec<usize> {
        let max_len = self.model.cfg.max_len;
        match self.prompt {
            CorrectorPrompt::Correction => {
                correction_input(&self.vocab, context, bad_reply, feedback, self.use_feedback, max_len)
            }
            CorrectorPrompt::Dialogue => {
                let ctx: Vec<&str> = context.iter().map(String::as_str).collect();
                pack(&self.vocab, &[], &ctx, &[], max_len)
            }
        }
    }

    /// `n` candidates: the greedy decode first, then `n − 1` temperature samples.
    pub fn generate_corrections(
        &self,
        context: &[String],
        bad_reply: &str,
        feedback: Option<&str>,
        n: usize,
        seed: u64,
    ) -> Result<Vec<String>> {
        if n < 1 {
            return Err(CoreError::InvalidInput("at least one correction candidate is required".into()));
        }
        let src = self.source(context, bad_reply, feedback);
        if src.is_empty() {
            return Err(CoreError::InvalidInput("correction input is empty".into()));
        }
        let w = self.blend_weight;
        let mut cands = director_candidates(&self.model, &src, w, Strategy::Greedy, self.max_new)?;
        cands.truncate(1);
        if n > 1 {
            let sample = Strategy::Sample {
                temperature: self.temperature,
                seed,
                n: n - 1,
            };
            cands.extend(director_candidates(&self.model, &src, w, sample, self.max_new)?);
        }
        Ok(cands.iter().map(|c| self.vocab.decode(c.content())).collect())
    }

    /// Greedy correction.
    pub fn correct(&self, context: &[String], bad_reply: &str, feedback: Option<&str>) -> Result<String> {
        let src = self.source(context, bad_reply, feedback);
        let c = generate(&self.model, &src, Strategy::Greedy, self.max_new, &LmScorer)?;
        Ok(c.first().map(|c| self.vocab.decode(c.content())).unwrap_or_default())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_value(CorrectorMeta {
            prompt: self.prompt,
            use_feedback: self.use_feedback,
            blend_weight: self.blend_weight,
            temperature: self.temperature,
            max_new: self.max_new,
        })?;
        Checkpoint::from_seq2seq(&self.model, &self.vocab, meta).save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let meta: CorrectorMeta = serde_json::from_value(ck.meta.clone())
            .map_err(|e| CoreError::InvalidInput(format!("not a corrector checkpoint: {e}")))?;
        let (model, vocab) = ck.into_seq2seq()?;
        Ok(Corrector {
            model,
            vocab,
            prompt: meta.prompt,
            use_feedback: meta.use_feedback,
            blend_weight: meta.blend_weight,
            temperature: meta.temperature,
            max_new: meta.max_new,
        })
    }
}

/// Encoded multitask training set; `pools[k]` indexes `pairs` for task `k`.
pub struct CorrectorTrainSet {
    pub pairs: Vec<SeqPair>,
    pub pools: [Vec<usize>; 3],
}

impl CorrectorTrainSet {
    pub fn build(corrections: &[CorrectionExample], aux: &AuxTasks, vocab: &Vocab, use_feedback: bool, max_len: usize) -> Self {
        let mut pairs = Vec::new();
        let mut pools: [Vec<usize>; 3] = Default::default();
        for ex in corrections {
            pools[0].push(pairs.len());
            pairs.push(SeqPair {
                src: correction_input(vocab, &ex.context, &ex.bad_reply, ex.feedback.as_deref(), use_feedback, max_len),
                tgt: target(vocab, &ex.target, max_len),
            });
        }
        for (ctx, reply, fb) in &aux.feedback {
            pools[1].push(pairs.len());
            pairs.push(SeqPair {
                src: feedback_input(vocab, ctx, reply, max_len),
                tgt: target(vocab, fb, max_len),
            });
        }
        for (ctx, reply) in &aux.dialogue {
            pools[2].push(pairs.len());
            pairs.push(SeqPair {
                src: dialogue_task_input(vocab, ctx, max_len),
                tgt: target(vocab, reply, max_len),
            });
        }
        CorrectorTrainSet { pairs, pools }
    }

    pub fn sampler(&self, mix: &MultitaskMix) -> WeightedPools {
        WeightedPools::new(self.pools.to_vec(), mix.weights().to_vec())
    }
}

/// Trains the corrector on correction pairs multitasked with auxiliary tasks.
/// With `use_feedback = false` the feedback text is left out of every correction input.
#[allow(clippy::too_many_arguments)]
pub fn train_corrector(
    gold_pairs: &[CorrectionExample],
    self_pairs: &[CorrectionExample],
    aux: &AuxTasks,
    valid_pairs: &[CorrectionExample],
    vocab: &Vocab,
    cfg: &CorrectorConfig,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(Corrector, TrainReport)> {
    cfg.mix.validate()?;
    let max_len = model_cfg.max_len;
    let corrections: Vec<CorrectionExample> = gold_pairs.iter().chain(self_pairs).cloned().collect();
    let set = CorrectorTrainSet::build(&corrections, aux, vocab, cfg.use_feedback, max_len);
    let sampler = set.sampler(&cfg.mix);
    if sampler.total_weight() <= 0.0 {
        return Err(CoreError::InvalidInput(
            "corrector training has no examples in any positively weighted task".into(),
        ));
    }
    let valid = CorrectorTrainSet::build(valid_pairs, &AuxTasks::default(), vocab, cfg.use_feedback, max_len).pairs;
    let mcfg = ModelConfig {
        vocab_size: vocab.len(),
        ..model_cfg.clone()
    };
    let (model, report) = match cfg.director_gamma {
        None => {
            let mut model = Seq2SeqModel::new(mcfg, train_cfg.seed, false)?;
            let mut objective = LmObjective::new(model.arch(), &set.pairs, &valid).with_sampler(Box::new(sampler));
            let report = fit(&mut model.params, &mut objective, train_cfg)?;
            (model, report)
        }
        Some(gamma) => {
            let negatives = corrections
                .iter()
                .map(|ex| {
                    let src = correction_input(vocab, &ex.context, &ex.bad_reply, ex.feedback.as_deref(), cfg.use_feedback, max_len);
                    label_standard(src, target(vocab, &ex.bad_reply, max_len), SequenceLabel::Negative)
                })
                .chain(set.pools[0].iter().map(|&i| {
                    let p = &set.pairs[i];
                    label_standard(p.src.clone(), p.tgt.clone(), SequenceLabel::Positive)
                }))
                .collect::<Result<Vec<_>>>()?;
            train_director(&set.pairs, &negatives, gamma, vocab.len(), &mcfg, train_cfg, (&valid, &[]))?
        }
    };
    Ok((
        Corrector {
            model,
            vocab: vocab.clone(),
            prompt: CorrectorPrompt::Correction,
            use_feedback: cfg.use_feedback,
            blend_weight: cfg.blend_weight,
            temperature: cfg.temperature,
            max_new: cfg.max_new,
        },
        report,
    ))
}

/// Mean F1 of the greedy correction against each example's target.
pub fn corrector_f1(corrector: &Corrector, examples: &[CorrectionExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(CoreError::InvalidInput("no correction examples to evaluate".into()));
    }
    let mut total = 0.0;
    for ex in examples {
        let hyp = corrector.correct(&ex.context, &ex.bad_reply, ex.feedback.as_deref())?;
        total += f1_overlap(&hyp, &ex.target);
    }
    Ok(total / examples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ErrorMode, Turn};

    fn conv(turns: Vec<Turn>) -> Conversation {
        Conversation {
            conversation_id: "c".into(),
            topic: "bazu".into(),
            turns,
        }
    }

    fn bad_then(next: Label) -> Conversation {
        let mut bad = Turn::bot("the color of bazu is red .", Label::HumanDown, ErrorMode::WrongValue);
        bad.gold_correction = Some("the color of bazu is blue .".into());
        conv(vec![
            Turn::human("what is the color of bazu ?", false),
            bad,
            Turn::human("that is not right .", true),
            Turn::bot("the color of bazu is blue .", next, ErrorMode::None),
        ])
    }

    #[test]
    fn gold_pairs_carry_the_following_feedback() {
        let pairs = build_gold_pairs(&[bad_then(Label::HumanUp)]);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].feedback.as_deref(), Some("that is not right ."));
        assert_eq!(pairs[0].target, "the color of bazu is blue .");
        assert_eq!(pairs[0].context, vec!["what is the color of bazu ?".to_string()]);
        assert!(build_gold_pairs(&[conv(vec![Turn::human("hi", false)])]).is_empty());
    }

    #[test]
    fn self_pairs_need_a_good_follow_up() {
        assert_eq!(build_self_pairs(&[bad_then(Label::HumanUp)]).len(), 1);
        assert_eq!(build_self_pairs(&[bad_then(Label::PredGood)]).len(), 1);
        assert!(build_self_pairs(&[bad_then(Label::Unlabeled)]).is_empty());
        let p = &build_self_pairs(&[bad_then(Label::HumanUp)])[0];
        assert_eq!(p.source, CorrectionSource::SelfCorrection);
        assert_eq!(p.turn_index, 1);
    }

    #[test]
    fn mix_parses_and_validates() {
        let m: MultitaskMix = "2:1:1".parse().unwrap();
        assert_eq!(m, MultitaskMix::default());
        assert!("1:1".parse::<MultitaskMix>().is_err());
        assert!("0:0:0".parse::<MultitaskMix>().is_err());
        assert!("1:-1:1".parse::<MultitaskMix>().is_err());
        assert!("a:b:c".parse::<MultitaskMix>().is_err());
    }

    #[test]
    fn source_serializes_as_self() {
        assert_eq!(serde_json::to_string(&CorrectionSource::SelfCorrection).unwrap(), "\"self\"");
    }
}
