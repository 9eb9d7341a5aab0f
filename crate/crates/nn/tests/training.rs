mod common;

use common::{random_seq, tiny_config};
use juicer_nn::checkpoint::Checkpoint;
use juicer_nn::generate::{generate, LmScorer, Strategy};
use juicer_nn::objective::{ClassifierObjective, DirectorObjective, LmObjective};
use juicer_nn::score::{perplexity, score_sequence};
use juicer_nn::{fit, ClassExample, EncoderClassifier, LabeledSeq, ModelConfig, Seq2SeqModel, SeqPair, TrainConfig, Vocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(vocab: usize) -> ModelConfig {
    ModelConfig {
        model_dim: 16,
        ffn_dim: 32,
        ..tiny_config(vocab)
    }
}

fn train_cfg(updates: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        batch_size: 4,
        max_updates: updates,
        eval_every: 50,
        ..TrainConfig::default()
    }
}

#[test]
fn single_pair_is_memorized() {
    let pair = SeqPair {
        src: vec![4, 5, 6],
        tgt: vec![7, 8, 9, 10],
    };
    let data = vec![pair.clone()];
    let mut model = Seq2SeqModel::new(small(12), 1, false).unwrap();
    let mut obj = LmObjective::new(model.arch(), &data, &[]);
    let report = fit(&mut model.params, &mut obj, &train_cfg(300)).unwrap();
    assert!(report.train_losses.last().unwrap() < &0.05);
    let out = generate(&model, &pair.src, Strategy::Greedy, 10, &LmScorer).unwrap();
    assert_eq!(out[0].content(), &pair.tgt[..]);
    assert!(score_sequence(&model, &pair.src, &pair.tgt).unwrap().mean() > -0.1);
    assert!(perplexity(&model, &data).unwrap() < 1.2);
}

#[test]
fn zero_updates_leave_parameters_unchanged() {
    let data = vec![SeqPair {
        src: vec![4],
        tgt: vec![5],
    }];
    let mut model = Seq2SeqModel::new(small(8), 2, false).unwrap();
    let before = model.params.clone();
    let mut obj = LmObjective::new(model.arch(), &data, &data);
    fit(&mut model.params, &mut obj, &train_cfg(0)).unwrap();
    for ((_, _, a), (_, _, b)) in before.iter().zip(model.params.iter()) {
        assert_eq!(a, b);
    }
}

#[test]
fn loss_curves_are_bitwise_reproducible() {
    let data = common::random_pairs(1, 12, 20);
    let run = || {
        let mut cfg = small(12);
        cfg.dropout = 0.1;
        let mut model = Seq2SeqModel::new(cfg, 3, false).unwrap();
        let mut obj = LmObjective::new(model.arch(), &data, &data[..5]);
        fit(&mut model.params, &mut obj, &train_cfg(40)).unwrap()
    };
    let a = run();
    let b = run();
    let bits = |r: &juicer_nn::TrainReport| r.train_losses.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.valid_losses, b.valid_losses);
}

#[test]
fn untrained_classifier_outputs_one_half() {
    let model = EncoderClassifier::new(small(10), 4).unwrap();
    let p = model.prob(&[4, 5, 6]).unwrap();
    assert_eq!(p, 0.5);
    let long = vec![4; 40];
    assert!(model.prob(&long).is_err());
}

#[test]
fn separable_toy_labels_are_learned() {
    // label is 1 iff token 5 appears
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut data = Vec::new();
    for i in 0..40 {
        let mut input = random_seq(&mut rng, 10, 2, 6);
        input.retain(|&t| t != 5);
        if input.is_empty() {
            input.push(4);
        }
        if i % 2 == 0 {
            input.insert(input.len() / 2, 5);
        }
        data.push(ClassExample {
            input,
            label: (i % 2 == 0) as u8 as f64,
            weight: 1.0,
        });
    }
    let mut model = EncoderClassifier::new(small(10), 6).unwrap();
    let mut obj = ClassifierObjective::new(model.arch(), &data, &[]);
    fit(&mut model.params, &mut obj, &train_cfg(300)).unwrap();
    for ex in &data {
        let p = model.prob(&ex.input).unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(p >= 0.5, ex.label == 1.0);
    }
}

fn director_data() -> (Vec<SeqPair>, Vec<LabeledSeq>) {
    let pos = common::random_pairs(3, 12, 6);
    let neg = common::random_pairs(4, 12, 6)
        .into_iter()
        .filter(|p| !p.tgt.is_empty())
        .map(|p| LabeledSeq {
            labels: vec![0.0; p.tgt.len()],
            mask: vec![1.0; p.tgt.len()],
            src: p.src,
            tgt: p.tgt,
        })
        .collect();
    (pos, neg)
}

#[test]
fn gamma_zero_leaves_zero_initialized_head_untouched() {
    let (pos, neg) = director_data();
    let mut model = Seq2SeqModel::new(small(12), 7, true).unwrap();
    let mut obj = DirectorObjective::new(model.arch(), &pos, &neg, &[], &[], 0.0);
    fit(&mut model.params, &mut obj, &train_cfg(20)).unwrap();
    let (w, b) = model.ids.cls.unwrap();
    assert!(model.params.get(w).iter().all(|&x| x == 0.0));
    assert!(model.params.get(b).iter().all(|&x| x == 0.0));
}

#[test]
fn gamma_one_gives_the_lm_head_no_gradient() {
    let (pos, neg) = director_data();
    let mut model = Seq2SeqModel::new(small(12), 8, true).unwrap();
    let lm_before = model.params.get(model.ids.lm_w).clone();
    let trunk_before = model.params.get(model.ids.enc.tok).clone();
    let mut obj = DirectorObjective::new(model.arch(), &pos, &neg, &[], &[], 1.0);
    fit(&mut model.params, &mut obj, &train_cfg(20)).unwrap();
    assert_eq!(model.params.get(model.ids.lm_w), &lm_before);
    assert_ne!(model.params.get(model.ids.enc.tok), &trunk_before);
}

#[test]
fn invalid_train_config_is_rejected() {
    let data = common::random_pairs(1, 8, 2);
    let mut model = Seq2SeqModel::new(small(8), 1, false).unwrap();
    let mut obj = LmObjective::new(model.arch(), &data, &[]);
    let cfg = TrainConfig {
        learning_rate: -1.0,
        ..train_cfg(5)
    };
    assert!(fit(&mut model.params, &mut obj, &cfg).is_err());
}

#[test]
fn checkpoint_round_trips_bitwise() {
    let model = common::director_model(12, 9);
    let vocab = Vocab::new((0..8).map(|i| format!("w{i}")));
    let ck = Checkpoint::from_seq2seq(&model, &vocab, serde_json::json!({"note": "x"}));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_bytes(), ck.to_bytes());
    let (m2, v2) = loaded.into_seq2seq().unwrap();
    assert_eq!(v2, vocab);
    assert!(m2.has_class_head());
    for ((_, n1, a), (_, n2, b)) in model.params.iter().zip(m2.params.iter()) {
        assert_eq!(n1, n2);
        let ab: Vec<u64> = a.iter().map(|x| x.to_bits()).collect();
        let bb: Vec<u64> = b.iter().map(|x| x.to_bits()).collect();
        assert_eq!(ab, bb);
    }
    assert_eq!(std::fs::read(&path).unwrap()[0], 1);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let model = EncoderClassifier::new(small(10), 1).unwrap();
    let vocab = Vocab::new(["a", "b"]);
    let bytes = Checkpoint::from_classifier(&model, &vocab, serde_json::Value::Null).to_bytes();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = 9;
    assert!(Checkpoint::from_bytes(&bad).is_err());
    assert!(Checkpoint::from_bytes(&bytes).unwrap().into_seq2seq().is_err());
}
