//! Central-difference gradient verification.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::params::{Grads, ParamStore};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Denominator floor that keeps near-zero gradients from inflating the ratio.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-4,
            n_samples: 200,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub n_checked: usize,
    pub worst_param: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compares analytic gradients of `loss` against central differences on a random
/// subsample of scalar parameters. `loss` must be deterministic (dropout off).
pub fn grad_check<F>(params: &mut ParamStore, mut loss: F, cfg: &GradCheckConfig) -> GradCheckReport
where
    F: FnMut(&ParamStore, Option<&mut Grads>) -> f64,
{
    let mut grads = Grads::zeros_like(params);
    loss(params, Some(&mut grads));

    // flat index → (param, offset)
    let sizes: Vec<usize> = params.iter().map(|(_, _, a)| a.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picks = sample(&mut rng, total, cfg.n_samples.min(total)).into_vec();
    picks.sort_unstable();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        n_checked: 0,
        worst_param: String::new(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
    for flat in picks {
        let (mut p, mut off) = (0, flat);
        while off >= sizes[p] {
            off -= sizes[p];
            p += 1;
        }
        let id = ids[p];
        let original = *params.get(id).iter().nth(off).expect("in range");
        set(params, id, off, original + cfg.epsilon);
        let plus = loss(params, None);
        set(params, id, off, original - cfg.epsilon);
        let minus = loss(params, None);
        set(params, id, off, original);

        let numeric = (plus - minus) / (2.0 * cfg.epsilon);
        let analytic = *grads.get(id).iter().nth(off).expect("in range");
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(cfg.floor);
        report.n_checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_param = params.name(id).to_string();
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
    report
}

fn set(params: &mut ParamStore, id: crate::params::ParamId, off: usize, v: f64) {
    *params.get_mut(id).iter_mut().nth(off).expect("in range") = v;
}
