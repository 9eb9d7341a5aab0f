use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::objective::Objective;
use crate::optim::{Adam, AdamConfig};
use crate::params::{Grads, ParamStore};
use crate::NnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_updates: usize,
    /// Validation checks without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub grad_clip: f64,
    /// Updates between validation checks.
    pub eval_every: usize,
    /// Linear learning-rate warmup length.
    pub warmup_updates: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            max_updates: 1000,
            patience: 5,
            seed: 0,
            grad_clip: 1.0,
            eval_every: 100,
            warmup_updates: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) {
            return Err(NnError::InvalidConfig(
                "learning_rate and grad_clip must be positive".into(),
            ));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.patience == 0 {
            return Err(NnError::InvalidConfig(
                "batch_size, eval_every and patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_losses: Vec<f64>,
    /// `(update, loss)` at each validation check; update 0 is the initial model.
    pub valid_losses: Vec<(usize, f64)>,
    pub best_update: usize,
    pub updates: usize,
    pub stopped_early: bool,
}

/// Runs Adam on `objective`, early-stopping on validation loss and restoring the
/// best checkpoint seen when a validation set exists.
pub fn fit(
    params: &mut ParamStore,
    objective: &mut dyn Objective,
    cfg: &TrainConfig,
) -> Result<TrainReport, NnError> {
    cfg.validate()?;
    let mut report = TrainReport::default();
    if cfg.max_updates == 0 {
        return Ok(report);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(params, cfg.adam);
    let mut grads = Grads::zeros_like(params);

    let mut best: Option<(f64, ParamStore)> = objective
        .validation_loss(params)
        .map(|l| (l, params.clone()));
    if let Some((l, _)) = &best {
        report.valid_losses.push((0, *l));
    }
    let mut bad_checks = 0;

    for update in 1..=cfg.max_updates {
        grads.zero();
        let loss = objective.train_batch(params, &mut grads, &mut rng, cfg.batch_size);
        if !loss.is_finite() {
            return Err(NnError::NonFiniteLoss { update, loss });
        }
        report.train_losses.push(loss);
        let norm = grads.global_norm();
        if !norm.is_finite() {
            return Err(NnError::NonFiniteLoss { update, loss: norm });
        }
        if norm > cfg.grad_clip {
            grads.scale(cfg.grad_clip / norm);
        }
        let lr = if cfg.warmup_updates > 0 && update <= cfg.warmup_updates {
            cfg.learning_rate * update as f64 / cfg.warmup_updates as f64
        } else {
            cfg.learning_rate
        };
        adam.step(params, &grads, lr);
        report.updates = update;

        if update % cfg.eval_every == 0 || update == cfg.max_updates {
            if let Some(vl) = objective.validation_loss(params) {
                if !vl.is_finite() {
                    return Err(NnError::NonFiniteLoss { update, loss: vl });
                }
                report.valid_losses.push((update, vl));
                match &best {
                    Some((bl, _)) if vl >= *bl => {
                        bad_checks += 1;
                        if bad_checks >= cfg.patience {
                            report.stopped_early = true;
                            break;
                        }
                    }
                    _ => {
                        best = Some((vl, params.clone()));
                        report.best_update = update;
                        bad_checks = 0;
                    }
                }
            }
        }
    }
    match best {
        Some((_, snapshot)) => *params = snapshot,
        None => report.best_update = report.updates,
    }
    Ok(report)
}
