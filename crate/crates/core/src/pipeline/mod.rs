//! Orchestration of the four steps: helper training, labeling, correction and
//! final retraining, with every intermediate artifact written to disk.

mod augment;
mod config;
mod sweep;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use juicer_nn::embed::TfIdfEmbedder;
use juicer_nn::{SeqPair, TrainConfig, TrainReport, Vocab};
use serde::{Deserialize, Serialize};

pub use augment::{
    build_augmented, calibrate_threshold, correctable_filter, feedback_similarity, rerank_by_scores,
    rerank_corrections, train_final, AugmentedDataset, AugmentedPair, CorrectionMap, FinalTraining,
    PredictedCorrection, Provenance, Reranked,
};
pub use config::{ArmConfig, ArmData, CorrectorMode, FinalObjective, PipelineConfig, RunSeeds};
pub use sweep::{sampling_rate_sweep, SweepRow};

use crate::corpus::{save_corpus, sparsify, split_corpus, Conversation, CorpusSplits, Label, Oracle, WorldSpec};
use crate::corrector::{
    build_aux_tasks, build_gold_pairs, build_self_pairs, corrector_f1, train_corrector, CorrectionExample,
    Corrector, CorrectorConfig,
};
use crate::dialogue::DecodeConfig;
use crate::eval::{eval_arm, EvalReport};
use crate::satisfaction::{
    build_classifier_set, evaluate_classifier, label_missing, train_satisfaction, ClassifierMetrics,
    ClassifierVariant, FnJudge, ReplyJudge, SatisfactionClassifier,
};
use crate::seeds::{derive, turn_seed};
use crate::text::build_vocab;
use crate::{CoreError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// The synthetic world and its full (pre-sparsification) corpus.
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub world: WorldSpec,
    pub corpus: Vec<Conversation>,
    /// Conversations collected live; they join the training split as-is, without
    /// splitting or sparsification.
    pub extra_train: Vec<Conversation>,
}

impl RunInputs {
    pub fn new(world: WorldSpec, corpus: Vec<Conversation>) -> Self {
        RunInputs {
            world,
            corpus,
            extra_train: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub test_unseen: usize,
    pub train_bot_turns: usize,
    pub train_labels_kept: usize,
    pub train_gold_corrections: usize,
    pub extra_conversations: usize,
    pub extra_gold_corrections: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelingCounts {
    pub unlabeled: usize,
    pub pred_good: usize,
    pub pred_bad: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrectionCounts {
    pub gold_pairs: usize,
    pub self_pairs: usize,
    pub pred_bad_turns: usize,
    pub correctable: usize,
    /// Correctable turns that received a non-skip correction.
    pub corrected: usize,
    pub skipped: usize,
    pub similarity_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub updates: usize,
    pub best_update: usize,
    pub stopped_early: bool,
    pub final_train_loss: Option<f64>,
    pub best_valid_loss: Option<f64>,
}

impl From<&TrainReport> for TrainSummary {
    fn from(r: &TrainReport) -> Self {
        TrainSummary {
            updates: r.updates,
            best_update: r.best_update,
            stopped_early: r.stopped_early,
            final_train_loss: r.train_losses.last().copied(),
            best_valid_loss: r
                .valid_losses
                .iter()
                .map(|&(_, l)| l)
                .min_by(|a, b| a.total_cmp(b)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub name: String,
    pub objective: FinalObjective,
    pub positives: usize,
    pub negatives: usize,
    pub provenance: BTreeMap<String, usize>,
    pub training: TrainSummary,
    pub test: EvalReport,
    pub test_unseen: Option<EvalReport>,
}

/// Everything measured by a run; reproducible bit-for-bit from (corpus, config).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub splits: SplitCounts,
    /// Test-split metrics per classifier variant.
    pub classifiers: BTreeMap<String, ClassifierMetrics>,
    pub labeling: LabelingCounts,
    pub corrections: CorrectionCounts,
    /// Greedy-correction F1 on the test split's gold corrections, per corrector.
    pub corrector_f1: BTreeMap<String, f64>,
    pub arms: Vec<ArmResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub status: RunStatus,
    pub failed_step: Option<String>,
    pub error: Option<String>,
    pub config: PipelineConfig,
    pub metrics: RunMetrics,
    pub artifacts: BTreeMap<String, String>,
    pub timings_ms: BTreeMap<String, u64>,
}

impl RunReport {
    pub fn new(config: PipelineConfig) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION,
            status: RunStatus::Pending,
            failed_step: None,
            error: None,
            config,
            metrics: RunMetrics::default(),
            artifacts: BTreeMap::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn arm(&self, name: &str) -> Option<&ArmResult> {
        self.metrics.arms.iter().find(|a| a.name == name)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it)?;
        buf.write_all(b"\n")?;
    }
    write_atomic(path, &buf)
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    out: &'a Path,
    report: RunReport,
}

impl Run<'_> {
    fn step<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let r = f(self).map_err(|e| CoreError::Step {
            step: name.to_string(),
            source: Box::new(e),
        });
        self.report.timings_ms.insert(name.to_string(), t0.elapsed().as_millis() as u64);
        r
    }

    fn artifact(&mut self, key: &str, rel: &str) -> PathBuf {
        let path = self.out.join(rel);
        self.report.artifacts.insert(key.to_string(), path.display().to_string());
        path
    }

    fn train_cfg(&self, base: &TrainConfig, tag: &str) -> TrainConfig {
        TrainConfig {
            seed: derive(self.cfg.seeds.train, tag),
            ..base.clone()
        }
    }
}

/// Runs the full pipeline and writes artifacts plus `report.json` under `out_dir`.
/// On failure the partial report (status `failed`, with the step name) is still written.
pub fn run_juicer(cfg: &PipelineConfig, inputs: &RunInputs, out_dir: &Path) -> Result<RunReport> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut run = Run {
        cfg,
        out: out_dir,
        report: RunReport::new(cfg.clone()),
    };
    run.report.status = RunStatus::Running;
    let result = execute(&mut run, inputs);
    let report_path = out_dir.join("report.json");
    match result {
        Ok(()) => {
            run.report.status = RunStatus::Done;
            run.report.save(&report_path)?;
            Ok(run.report)
        }
        Err(e) => {
            run.report.status = RunStatus::Failed;
            if let CoreError::Step { step, source } = &e {
                run.report.failed_step = Some(step.clone());
                run.report.error = Some(source.to_string());
            } else {
                run.report.error = Some(e.to_string());
            }
            run.report.save(&report_path)?;
            Err(e)
        }
    }
}

/// Splits the corpus and sparsifies the training portion only.
pub fn prepare_splits(cfg: &PipelineConfig, corpus: &[Conversation]) -> Result<CorpusSplits> {
    let split_cfg = crate::corpus::SplitConfig {
        seed: cfg.seeds.split,
        ..cfg.split.clone()
    };
    let mut splits = split_corpus(corpus, &split_cfg);
    if splits.train.is_empty() || splits.test.is_empty() {
        return Err(CoreError::InvalidInput("corpus too small to split into train and test".into()));
    }
    splits.train = sparsify(&splits.train, cfg.sample_rate, cfg.seeds.sparsify)?;
    Ok(splits)
}

/// Validation-split pairs used for early stopping of final models.
pub fn valid_dataset(valid: &[Conversation]) -> AugmentedDataset {
    build_augmented(valid, &CorrectionMap::new(), &ArmConfig::baseline())
}

fn execute(run: &mut Run, inputs: &RunInputs) -> Result<()> {
    let cfg = run.cfg;
    let vocab = build_vocab(&inputs.world);
    let oracle = Oracle::new(&inputs.world);
    let mcfg = juicer_nn::ModelConfig {
        vocab_size: vocab.len(),
        ..cfg.model.clone()
    };

    let splits = run.step("split", |run| {
        crate::corpus::validate_corpus(&inputs.extra_train)?;
        let mut s = prepare_splits(cfg, &inputs.corpus)?;
        s.train.extend(inputs.extra_train.iter().cloned());
        let sc = &mut run.report.metrics.splits;
        sc.extra_conversations = inputs.extra_train.len();
        sc.extra_gold_corrections = inputs
            .extra_train
            .iter()
            .flat_map(|c| &c.turns)
            .filter(|t| t.gold_correction.is_some())
            .count();
        sc.train = s.train.len();
        sc.valid = s.valid.len();
        sc.test = s.test.len();
        sc.test_unseen = s.test_unseen.len();
        for conv in &s.train {
            for i in conv.bot_indices() {
                sc.train_bot_turns += 1;
                let t = &conv.turns[i];
                if t.label().is_human() {
                    sc.train_labels_kept += 1;
                }
                if t.gold_correction.is_some() {
                    sc.train_gold_corrections += 1;
                }
            }
        }
        for (key, conv) in [("train_sparse", &s.train), ("valid", &s.valid), ("test", &s.test), ("test_unseen", &s.test_unseen)] {
            let p = run.artifact(key, &format!("data/{key}.jsonl"));
            save_corpus(conv, &p)?;
        }
        Ok(s)
    })?;

    let mut labeled = splits.train.clone();
    let mut reranker: Option<SatisfactionClassifier> = None;
    let mut corrections = CorrectionMap::new();

    if cfg.needs_feedback_steps() {
        // Step 1a: both classifier variants
        let mut trained: BTreeMap<ClassifierVariant, SatisfactionClassifier> = BTreeMap::new();
        run.step("train_classifiers", |run| {
            for variant in [ClassifierVariant::ContextBot, ClassifierVariant::ContextBotHuman] {
                let train = build_classifier_set(&splits.train, variant, &vocab, mcfg.max_len);
                let valid = build_classifier_set(&splits.valid, variant, &vocab, mcfg.max_len);
                let tcfg = run.train_cfg(&cfg.classifier_train, &format!("classifier/{}", variant.as_str()));
                let clf = match train_satisfaction(&train, &valid, variant, &vocab, &mcfg, &tcfg) {
                    Ok((clf, _)) => clf,
                    // single-class labels leave nothing to learn
                    Err(CoreError::InvalidInput(_)) => continue,
                    Err(e) => return Err(e),
                };
                let test = build_classifier_set(&splits.test, variant, &vocab, mcfg.max_len);
                if let Ok(m) = evaluate_classifier(&clf, &test, 0.5) {
                    run.report.metrics.classifiers.insert(variant.as_str().to_string(), m);
                }
                let p = run.artifact(&format!("classifier_{}", variant.as_str()), &format!("models/classifier_{}.ckpt", variant.as_str()));
                clf.save(&p)?;
                trained.insert(variant, clf);
            }
            Ok(())
        })?;

        // Step 2: fill in the unlabeled turns
        run.step("label_missing", |run| {
            let only_label = single_human_label(&splits.train);
            let constant = FnJudge(move |_: &[crate::corpus::Turn], _: &str, _: Option<&str>| {
                if only_label == Some(true) { 1.0 } else { 0.0 }
            });
            let judge: &dyn ReplyJudge = match trained.get(&cfg.classifier_variant) {
                Some(c) => c,
                None => &constant,
            };
            labeled = label_missing(&splits.train, judge, cfg.label_threshold);
            let lc = &mut run.report.metrics.labeling;
            for conv in &splits.train {
                lc.unlabeled += conv.bot_indices().filter(|&i| conv.turns[i].label() == Label::Unlabeled).count();
            }
            for conv in &labeled {
                for i in conv.bot_indices() {
                    match conv.turns[i].label() {
                        Label::PredGood => lc.pred_good += 1,
                        Label::PredBad => lc.pred_bad += 1,
                        _ => {}
                    }
                }
            }
            let p = run.artifact("train_labeled", "data/train_labeled.jsonl");
            save_corpus(&labeled, &p)
        })?;
        reranker = trained.remove(&ClassifierVariant::ContextBot);
    }

    if cfg.needs_corrections() {
        // Step 1b: corrector(s), trained after labeling so self-corrections can use predicted labels
        let gold = build_gold_pairs(&labeled);
        let selfp = if cfg.use_self_corrections { build_self_pairs(&labeled) } else { Vec::new() };
        let test_pairs = build_gold_pairs(&splits.test);
        let valid_pairs = build_gold_pairs(&splits.valid);
        let corrector = run.step("train_corrector", |run| {
            run.report.metrics.corrections.gold_pairs = gold.len();
            run.report.metrics.corrections.self_pairs = selfp.len();
            let p = run.artifact("correction_pairs", "data/correction_pairs.jsonl");
            write_jsonl(&p, &gold.iter().chain(&selfp).collect::<Vec<_>>())?;
            let aux = build_aux_tasks(&labeled);
            let ccfg = CorrectorConfig {
                mix: cfg.mix,
                use_feedback: cfg.use_feedback,
                director_gamma: cfg.corrector_director_gamma,
                blend_weight: if cfg.corrector_director_gamma.is_some() { cfg.blend_weight } else { 0.0 },
                temperature: cfg.temperature,
                max_new: cfg.max_new,
            };
            let train_one = |run: &Run, gold: &[CorrectionExample], selfp: &[CorrectionExample], use_feedback: bool, tag: &str| {
                let tcfg = run.train_cfg(&cfg.corrector_train, tag);
                let c = CorrectorConfig { use_feedback, ..ccfg.clone() };
                train_corrector(gold, selfp, &aux, &valid_pairs, &vocab, &c, &mcfg, &tcfg).map(|(c, _)| c)
            };
            let corrector = match cfg.corrector_mode {
                CorrectorMode::Trained => {
                    if gold.is_empty() && selfp.is_empty() {
                        None
                    } else {
                        Some(train_one(run, &gold, &selfp, cfg.use_feedback, "corrector")?)
                    }
                }
                CorrectorMode::BaseLm => {
                    let good = build_augmented(&labeled, &CorrectionMap::new(), &ArmConfig {
                        predicted_corrections: false,
                        ..ArmConfig::juicer()
                    });
                    let base = AugmentedDataset {
                        positives: good
                            .positives
                            .into_iter()
                            .filter(|p| matches!(p.provenance, Provenance::HumanUp | Provenance::PredGood))
                            .collect(),
                        negatives: Vec::new(),
                    };
                    let tcfg = run.train_cfg(&cfg.corrector_train, "corrector/base_lm");
                    let valid = valid_dataset(&splits.valid);
                    let (m, _) = train_final(&base, &FinalTraining {
                        vocab: &vocab,
                        objective: FinalObjective::StandardLm,
                        gamma: 0.0,
                        decode: DecodeConfig::default(),
                        model: &cfg.model,
                        train: &tcfg,
                        valid: &valid,
                    })?;
                    let mut c = Corrector::from_dialogue_model(m.model, vocab.clone(), cfg.max_new);
                    c.temperature = cfg.temperature;
                    Some(c)
                }
            };
            if let Some(c) = &corrector {
                let p = run.artifact("corrector", "models/corrector.ckpt");
                c.save(&p)?;
                if !test_pairs.is_empty() {
                    let f = corrector_f1(c, &test_pairs)?;
                    let key = if cfg.corrector_mode == CorrectorMode::BaseLm { "base_lm" } else { "main" };
                    run.report.metrics.corrector_f1.insert(key.into(), f);
                }
            }
            if cfg.corrector_ablations && !test_pairs.is_empty() && !gold.is_empty() {
                let all_self = build_self_pairs(&labeled);
                let variants: [(&str, &[CorrectionExample], bool); 3] = [
                    ("gold_self_feedback", &all_self, true),
                    ("gold_only_feedback", &[], true),
                    ("gold_self_no_feedback", &all_self, false),
                ];
                for (name, sp, fb) in variants {
                    let reuse = cfg.corrector_mode == CorrectorMode::Trained
                        && cfg.use_feedback == fb
                        && (sp.is_empty() != cfg.use_self_corrections)
                        && cfg.corrector_director_gamma.is_none();
                    let f = match (&corrector, reuse) {
                        (Some(_), true) => run.report.metrics.corrector_f1["main"],
                        _ => corrector_f1(&train_one(run, &gold, sp, fb, &format!("corrector/{name}"))?, &test_pairs)?,
                    };
                    run.report.metrics.corrector_f1.insert(name.into(), f);
                }
            }
            Ok(corrector)
        })?;

        // Step 3: correctable filter, candidate generation and reranking
        run.step("correct", |run| {
            let embedder = TfIdfEmbedder::fit(splits.train.iter().flat_map(|c| c.turns.iter().map(|t| t.text.as_str())));
            let threshold = match cfg.similarity_threshold {
                Some(t) => t,
                None => {
                    let mut sims = Vec::new();
                    for conv in &splits.valid {
                        for i in conv.bot_indices() {
                            if conv.turns[i].label().is_good() == Some(false) {
                                sims.push(feedback_similarity(&embedder, conv, i));
                            }
                        }
                    }
                    calibrate_threshold(&sims, cfg.target_pass_rate)
                }
            };
            let need_all = cfg.resolved_arms().iter().any(|a| a.data == ArmData::Juicer && !a.correctable_filter);
            let cc = &mut run.report.metrics.corrections;
            cc.similarity_threshold = threshold;
            for conv in &labeled {
                for i in conv.bot_indices() {
                    if conv.turns[i].label() != Label::PredBad {
                        continue;
                    }
                    cc.pred_bad_turns += 1;
                    let similarity = feedback_similarity(&embedder, conv, i);
                    let correctable = similarity >= threshold;
                    cc.correctable += correctable as usize;
                    let (Some(corrector), Some(judge)) = (&corrector, &reranker) else { continue };
                    if !correctable && !need_all {
                        continue;
                    }
                    let ctx: Vec<String> = conv.turns[..i].iter().map(|t| t.text.clone()).collect();
                    let fb = conv.feedback_after(i).map(|t| t.text.as_str());
                    let seed = turn_seed(cfg.seeds.decode, &conv.conversation_id, i);
                    let cands = corrector.generate_corrections(&ctx, &conv.turns[i].text, fb, cfg.n_candidates, seed)?;
                    let best = rerank_corrections(&cands, &conv.turns[..i], judge)?;
                    if correctable {
                        if best.is_some() {
                            cc.corrected += 1;
                        } else {
                            cc.skipped += 1;
                        }
                    }
                    corrections.insert(
                        (conv.conversation_id.clone(), i),
                        PredictedCorrection {
                            conversation_id: conv.conversation_id.clone(),
                            turn_index: i,
                            similarity,
                            correctable,
                            n_candidates: cands.len(),
                            correction: best,
                        },
                    );
                }
            }
            let p = run.artifact("predicted_corrections", "data/predicted_corrections.jsonl");
            write_jsonl(&p, &corrections.values().collect::<Vec<_>>())
        })?;
    }

    // Step 4: one final model per arm
    let valid = valid_dataset(&splits.valid);
    for arm in cfg.resolved_arms() {
        let objective = cfg.arm_objective(&arm);
        let source = if arm.data == ArmData::Juicer { &labeled } else { &splits.train };
        let ds = build_augmented(source, &corrections, &arm);
        let name = arm.name.clone();
        let (model, summary) = run.step(&format!("train_final/{name}"), |run| {
            let p = run.artifact(&format!("arm/{name}/positives"), &format!("arms/{name}/positives.jsonl"));
            write_jsonl(&p, &ds.positives)?;
            let p = run.artifact(&format!("arm/{name}/negatives"), &format!("arms/{name}/negatives.jsonl"));
            write_jsonl(&p, &ds.negatives)?;
            let tcfg = run.train_cfg(&cfg.final_train, &format!("final/{name}"));
            let (model, report) = train_final(&ds, &FinalTraining {
                vocab: &vocab,
                objective,
                gamma: cfg.gamma,
                decode: DecodeConfig {
                    max_new: cfg.max_new,
                    blend_weight: cfg.blend_weight,
                    ..DecodeConfig::default()
                },
                model: &cfg.model,
                train: &tcfg,
                valid: &valid,
            })?;
            let p = run.artifact(&format!("arm/{name}/model"), &format!("arms/{name}/model.ckpt"));
            model.save(&p, serde_json::json!({ "arm": name, "objective": objective }))?;
            Ok((model, TrainSummary::from(&report)))
        })?;
        let (test, test_unseen) = run.step(&format!("eval/{name}"), |_| {
            let test = eval_arm(&name, &model, &oracle, &splits.test)?;
            let unseen = if cfg.eval_unseen && !splits.test_unseen.is_empty() {
                Some(eval_arm(&name, &model, &oracle, &splits.test_unseen)?)
            } else {
                None
            };
            Ok((test, unseen))
        })?;
        run.report.metrics.arms.push(ArmResult {
            name,
            objective,
            positives: ds.positives.len(),
            negatives: ds.negatives.len(),
            provenance: ds.provenance_counts(),
            training: summary,
            test,
            test_unseen,
        });
    }
    Ok(())
}

/// `Some(is_good)` when every human label in the corpus agrees.
fn single_human_label(corpus: &[Conversation]) -> Option<bool> {
    let mut seen = None;
    for conv in corpus {
        for i in conv.bot_indices() {
            let t = &conv.turns[i];
            if !t.label().is_human() {
                continue;
            }
            let g = t.label().is_good();
            match seen {
                None => seen = g,
                Some(s) if Some(s) != g => return None,
                _ => {}
            }
        }
    }
    seen
}

/// Encodes an arm's positives as LM pairs (used by tooling that trains outside a run).
pub fn positive_pairs(ds: &AugmentedDataset, vocab: &Vocab, max_len: usize) -> Vec<SeqPair> {
    ds.positives
        .iter()
        .map(|p| {
            let ctx: Vec<&str> = p.context.iter().map(String::as_str).collect();
            SeqPair {
                src: crate::dialogue::dialogue_source(vocab, &ctx, max_len),
                tgt: crate::text::target(vocab, &p.reply, max_len),
            }
        })
        .filter(|p| !p.src.is_empty() && !p.tgt.is_empty())
        .collect()
}
