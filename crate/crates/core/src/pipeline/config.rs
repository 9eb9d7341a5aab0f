use std::collections::BTreeSet;

use juicer_nn::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::corpus::SplitConfig;
use crate::corrector::MultitaskMix;
use crate::satisfaction::ClassifierVariant;
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalObjective {
    StandardLm,
    Director,
    DirectorOverlap,
}

impl FinalObjective {
    pub fn is_director(self) -> bool {
        self != FinalObjective::StandardLm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectorMode {
    /// Trained on gold and self-correction pairs.
    Trained,
    /// A dialogue model trained only on good replies, prompted with the context.
    BaseLm,
}

/// Which training data an arm's final model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmData {
    /// Human-labeled good replies plus retained gold corrections.
    GoldOnly,
    /// `GoldOnly` plus (context ⊕ bad reply → feedback text) pairs.
    FeedbackText,
    /// Positives from human labels, predicted labels, gold and predicted corrections.
    Juicer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub name: String,
    pub data: ArmData,
    #[serde(default = "yes")]
    pub pred_good: bool,
    #[serde(default = "yes")]
    pub predicted_corrections: bool,
    #[serde(default = "yes")]
    pub correctable_filter: bool,
    /// Falls back to the run's `final_objective`.
    #[serde(default)]
    pub objective: Option<FinalObjective>,
}

fn yes() -> bool {
    true
}

impl ArmConfig {
    pub fn new(name: &str, data: ArmData, objective: FinalObjective) -> Self {
        ArmConfig {
            name: name.to_string(),
            data,
            pred_good: true,
            predicted_corrections: true,
            correctable_filter: true,
            objective: Some(objective),
        }
    }

    /// The gold-corrections-only baseline.
    pub fn baseline() -> Self {
        ArmConfig::new("baseline", ArmData::GoldOnly, FinalObjective::StandardLm)
    }

    pub fn juicer() -> Self {
        ArmConfig::new("juicer", ArmData::Juicer, FinalObjective::StandardLm)
    }

    pub fn juicer_director() -> Self {
        ArmConfig::new("juicer_director", ArmData::Juicer, FinalObjective::Director)
    }

    pub fn without_predicted_corrections() -> Self {
        ArmConfig {
            predicted_corrections: false,
            ..ArmConfig::new("wo_predicted_corrections", ArmData::Juicer, FinalObjective::StandardLm)
        }
    }

    pub fn without_correctable_filter() -> Self {
        ArmConfig {
            correctable_filter: false,
            ..ArmConfig::new("wo_correctable_filter", ArmData::Juicer, FinalObjective::StandardLm)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSeeds {
    pub split: u64,
    pub sparsify: u64,
    pub train: u64,
    pub decode: u64,
}

impl RunSeeds {
    pub fn all(seed: u64) -> Self {
        RunSeeds {
            split: seed,
            sparsify: seed,
            train: seed,
            decode: seed,
        }
    }
}

fn default_model() -> ModelConfig {
    ModelConfig {
        vocab_size: 0,
        model_dim: 32,
        n_layers: 2,
        n_heads: 4,
        ffn_dim: 64,
        max_len: 64,
        dropout: 0.1,
    }
}

fn default_train(max_updates: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        batch_size: 32,
        max_updates,
        patience: 4,
        eval_every: 100,
        warmup_updates: 50,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Fraction of bot turns whose human label survives sparsification.
    pub sample_rate: f64,
    pub n_candidates: usize,
    /// Cosine threshold of the correctable filter; calibrated on validation when absent.
    pub similarity_threshold: Option<f64>,
    /// Fraction of validation bad cases the calibrated threshold lets through.
    pub target_pass_rate: f64,
    /// Classifier used to label the unlabeled turns.
    pub classifier_variant: ClassifierVariant,
    pub label_threshold: f64,
    pub use_self_corrections: bool,
    pub use_feedback: bool,
    pub corrector_mode: CorrectorMode,
    /// Trains the corrector jointly with a token classifier when set.
    pub corrector_director_gamma: Option<f64>,
    pub final_objective: FinalObjective,
    pub gamma: f64,
    pub blend_weight: f64,
    pub mix: MultitaskMix,
    pub temperature: f64,
    pub max_new: usize,
    pub seeds: RunSeeds,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub classifier_train: TrainConfig,
    pub corrector_train: TrainConfig,
    pub final_train: TrainConfig,
    /// Final-model arms; empty means a single JUICER arm with `final_objective`.
    pub arms: Vec<ArmConfig>,
    /// Also trains gold-only and feedback-free correctors for comparison.
    pub corrector_ablations: bool,
    pub eval_unseen: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sample_rate: 0.2,
            n_candidates: 60,
            similarity_threshold: None,
            target_pass_rate: 0.62,
            classifier_variant: ClassifierVariant::ContextBotHuman,
            label_threshold: 0.5,
            use_self_corrections: true,
            use_feedback: true,
            corrector_mode: CorrectorMode::Trained,
            corrector_director_gamma: None,
            final_objective: FinalObjective::StandardLm,
            gamma: 0.5,
            blend_weight: 1.0,
            mix: MultitaskMix::default(),
            temperature: 1.0,
            max_new: 16,
            seeds: RunSeeds::default(),
            split: SplitConfig::default(),
            model: default_model(),
            classifier_train: default_train(1500),
            corrector_train: default_train(1800),
            final_train: default_train(3000),
            arms: Vec::new(),
            corrector_ablations: false,
            eval_unseen: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::InvalidParams(m));
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return bad(format!("sample_rate {} outside (0, 1]", self.sample_rate));
        }
        if self.n_candidates < 1 {
            return bad("n_candidates must be at least 1".into());
        }
        if let Some(t) = self.similarity_threshold {
            if !(-1.0..=1.0).contains(&t) {
                return bad(format!("similarity_threshold {t} outside [-1, 1]"));
            }
        }
        if !(self.target_pass_rate > 0.0 && self.target_pass_rate <= 1.0) {
            return bad(format!("target_pass_rate {} outside (0, 1]", self.target_pass_rate));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if let Some(g) = self.corrector_director_gamma {
            if !(0.0..=1.0).contains(&g) {
                return bad(format!("corrector_director_gamma {g} outside [0, 1]"));
            }
        }
        if !(self.blend_weight >= 0.0) {
            return bad(format!("blend_weight {} must be nonnegative", self.blend_weight));
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive".into());
        }
        if self.max_new == 0 {
            return bad("max_new must be positive".into());
        }
        self.mix.validate()?;
        for t in [&self.classifier_train, &self.corrector_train, &self.final_train] {
            t.validate()?;
        }
        let mut names = BTreeSet::new();
        for arm in &self.arms {
            if arm.name.is_empty() || arm.name.contains(['/', '\\']) {
                return bad(format!("invalid arm name {:?}", arm.name));
            }
            if !names.insert(arm.name.as_str()) {
                return bad(format!("duplicate arm name {:?}", arm.name));
            }
        }
        Ok(())
    }

    /// Arms to run, resolving the empty-list default.
    pub fn resolved_arms(&self) -> Vec<ArmConfig> {
        if self.arms.is_empty() {
            return vec![ArmConfig::new("juicer", ArmData::Juicer, self.final_objective)];
        }
        self.arms.clone()
    }

    pub fn arm_objective(&self, arm: &ArmConfig) -> FinalObjective {
        arm.objective.unwrap_or(self.final_objective)
    }

    /// Whether Steps 1–3 are needed at all.
    pub fn needs_feedback_steps(&self) -> bool {
        self.corrector_ablations || self.resolved_arms().iter().any(|a| a.data == ArmData::Juicer)
    }

    pub fn needs_corrections(&self) -> bool {
        self.corrector_ablations
            || self
                .resolved_arms()
                .iter()
                .any(|a| a.data == ArmData::Juicer && a.predicted_corrections)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.resolved_arms().len(), 1);
    }

    #[test]
    fn invalid_knobs_are_rejected() {
        let mut cfg = PipelineConfig {
            n_candidates: 0,
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.n_candidates = 60;
        cfg.sample_rate = 0.0;
        assert!(cfg.validate().is_err());
        cfg.sample_rate = 0.2;
        cfg.arms = vec![ArmConfig::baseline(), ArmConfig::baseline()];
        assert!(cfg.validate().is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sample_rat": 0.2}"#).is_err());
    }
}
