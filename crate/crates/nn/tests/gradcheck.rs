mod common;

use common::{director_model, random_pairs, random_seq, tiny_config};
use juicer_nn::gradcheck::{grad_check, GradCheckConfig};
use juicer_nn::objective::{classifier_loss, director_loss, lm_loss};
use juicer_nn::params::randn;
use juicer_nn::{ClassExample, EncoderClassifier, LabeledSeq, Seq2SeqModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const V: usize = 12;

fn cfg(seed: u64) -> GradCheckConfig {
    GradCheckConfig {
        epsilon: 1e-4,
        n_samples: 250,
        seed,
        ..GradCheckConfig::default()
    }
}

#[test]
fn lm_loss_gradients_match_finite_differences() {
    let mut model = Seq2SeqModel::new(tiny_config(V), 3, false).unwrap();
    let pairs = random_pairs(5, V, 3);
    let refs: Vec<_> = pairs.iter().collect();
    let arch = model.arch();
    let report = grad_check(
        &mut model.params,
        |p, g| lm_loss(&arch, p, &refs, g, None),
        &cfg(1),
    );
    assert!(report.n_checked >= 200);
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn classifier_loss_gradients_match_finite_differences() {
    let mut model = EncoderClassifier::new(tiny_config(V), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (r, c) = model.params.get(model.ids.head_w).dim();
    *model.params.get_mut(model.ids.head_w) = randn(&mut rng, r, c, 0.5);
    let examples: Vec<ClassExample> = (0..4)
        .map(|i| ClassExample {
            input: random_seq(&mut rng, V, 1, 7),
            label: (i % 2) as f64,
            weight: 1.0 + i as f64 * 0.5,
        })
        .collect();
    let refs: Vec<_> = examples.iter().collect();
    let arch = model.arch();
    let report = grad_check(
        &mut model.params,
        |p, g| classifier_loss(&arch, p, &refs, g, None),
        &cfg(2),
    );
    assert!(report.n_checked >= 200);
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn joint_loss_gradients_match_finite_differences() {
    let mut model = director_model(V, 6);
    let pos = random_pairs(7, V, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let labeled: Vec<LabeledSeq> = (0..3)
        .map(|_| {
            let tgt = random_seq(&mut rng, V, 1, 5);
            let labels = tgt.iter().map(|_| rng.random_range(0..2) as f64).collect();
            let mask = tgt.iter().map(|_| 1.0).collect();
            LabeledSeq {
                src: random_seq(&mut rng, V, 1, 5),
                tgt,
                labels,
                mask,
            }
        })
        .collect();
    let p: Vec<_> = pos.iter().collect();
    let l: Vec<_> = labeled.iter().collect();
    let arch = model.arch();
    let report = grad_check(
        &mut model.params,
        |ps, g| director_loss(&arch, ps, &p, &l, 0.5, g, None),
        &cfg(3),
    );
    assert!(report.n_checked >= 200);
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}
