use juicer_core::corpus::{generate_corpus, generate_world, CorpusParams};
use juicer_core::corrector::{build_aux_tasks, build_gold_pairs, build_self_pairs, CorrectorTrainSet, MultitaskMix};
use juicer_core::pipeline::{run_juicer, ArmConfig, PipelineConfig, RunInputs, RunReport, RunStatus};
use juicer_core::text::build_vocab;
use juicer_core::CoreError;
use juicer_nn::{ModelConfig, TrainConfig};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_train() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_updates: 15,
        patience: 2,
        eval_every: 5,
        warmup_updates: 2,
        ..TrainConfig::default()
    }
}

fn tiny_cfg() -> PipelineConfig {
    PipelineConfig {
        n_candidates: 3,
        max_new: 8,
        model: ModelConfig {
            vocab_size: 0,
            model_dim: 16,
            n_layers: 1,
            n_heads: 2,
            ffn_dim: 32,
            max_len: 48,
            dropout: 0.0,
        },
        classifier_train: tiny_train(),
        corrector_train: tiny_train(),
        final_train: tiny_train(),
        ..PipelineConfig::default()
    }
}

fn inputs(p_bad: f64) -> RunInputs {
    let world = generate_world(3, 8, 2).unwrap();
    let corpus = generate_corpus(&world, 3, &CorpusParams::new(60, 3, p_bad, 0.5)).unwrap();
    RunInputs::new(world, corpus)
}

#[test]
fn full_labels_and_no_errors_degenerate_to_plain_lm_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        sample_rate: 1.0,
        ..tiny_cfg()
    };
    let report = run_juicer(&cfg, &inputs(0.0), dir.path()).unwrap();
    assert_eq!(report.status, RunStatus::Done);
    let m = &report.metrics;
    assert_eq!(m.labeling.unlabeled, 0);
    assert_eq!(m.labeling.pred_good + m.labeling.pred_bad, 0);
    assert_eq!(m.corrections.corrected, 0);
    let arm = report.arm("juicer").unwrap();
    assert_eq!(arm.negatives, 0);
    assert_eq!(arm.provenance.get("human_up").copied(), Some(arm.positives));
}

#[test]
fn failing_step_is_named_in_the_saved_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        sample_rate: 1.0,
        arms: vec![ArmConfig::juicer_director()],
        ..tiny_cfg()
    };
    let err = run_juicer(&cfg, &inputs(0.0), dir.path()).unwrap_err();
    assert!(matches!(err, CoreError::Step { ref step, .. } if step == "train_final/juicer_director"));
    let saved = RunReport::load(&dir.path().join("report.json")).unwrap();
    assert_eq!(saved.status, RunStatus::Failed);
    assert_eq!(saved.failed_step.as_deref(), Some("train_final/juicer_director"));
}

#[test]
fn invalid_config_is_rejected_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        n_candidates: 0,
        ..tiny_cfg()
    };
    assert!(run_juicer(&cfg, &inputs(0.3), dir.path()).is_err());
}

#[test]
fn multitask_draws_follow_the_mix() {
    let world = generate_world(1, 10, 3).unwrap();
    let corpus = generate_corpus(&world, 1, &CorpusParams::new(200, 4, 0.4, 0.5)).unwrap();
    let vocab = build_vocab(&world);
    let mut corrections = build_gold_pairs(&corpus);
    corrections.extend(build_self_pairs(&corpus));
    let set = CorrectorTrainSet::build(&corrections, &build_aux_tasks(&corpus), &vocab, true, 48);
    assert!(set.pools.iter().all(|p| !p.is_empty()));
    let sampler = set.sampler(&MultitaskMix::default());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 20_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        counts[sampler.draw_pool(&mut rng)] += 1;
    }
    let expected = [0.5, 0.25, 0.25].map(|p| p * n as f64);
    let chi2: f64 = counts
        .iter()
        .zip(expected)
        .map(|(&o, e)| (o as f64 - e).powi(2) / e)
        .sum();
    // 0.1% critical value with two degrees of freedom
    assert!(chi2 < 13.82, "chi-square {chi2} for counts {counts:?}");
}
