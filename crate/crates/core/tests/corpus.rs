use std::collections::BTreeSet;

use juicer_core::corpus::{
    corpus_stats, dense_feedback_holds, generate_corpus, generate_world, load_corpus, save_corpus, sparsify,
    split_corpus, validate_corpus, Conversation, CorpusParams, Label, SplitConfig,
};
use proptest::prelude::*;

fn corpus(seed: u64, n: usize) -> Vec<Conversation> {
    let world = generate_world(seed, 12, 3).unwrap();
    generate_corpus(&world, seed, &CorpusParams::new(n, 4, 0.4, 0.5)).unwrap()
}

fn kept(c: &[Conversation]) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (ci, conv) in c.iter().enumerate() {
        for (ti, t) in conv.turns.iter().enumerate() {
            if t.is_bot() && t.label().is_human() {
                out.insert((ci, ti));
            }
        }
    }
    out
}

#[test]
fn generation_is_deterministic_and_valid() {
    let a = corpus(5, 80);
    assert_eq!(a, corpus(5, 80));
    assert_ne!(a, corpus(6, 80));
    validate_corpus(&a).unwrap();
    assert!(dense_feedback_holds(&a));
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(2, 40);
    let p = dir.path().join("c.jsonl");
    save_corpus(&c, &p).unwrap();
    assert_eq!(load_corpus(&p).unwrap(), c);
}

#[test]
fn splits_partition_the_corpus() {
    let c = corpus(3, 200);
    let s = split_corpus(&c, &SplitConfig::default());
    let mut ids: Vec<&str> = s
        .train
        .iter()
        .chain(&s.valid)
        .chain(&s.test)
        .chain(&s.test_unseen)
        .map(|c| c.conversation_id.as_str())
        .collect();
    assert_eq!(ids.len(), c.len());
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), c.len());
    let unseen: BTreeSet<&str> = s.test_unseen.iter().map(|c| c.topic.as_str()).collect();
    assert!(s.train.iter().all(|c| !unseen.contains(c.topic.as_str())));
}

#[test]
fn stats_count_every_bot_turn_once() {
    let c = corpus(4, 60);
    let st = corpus_stats(&c);
    assert_eq!(st.labels.values().sum::<usize>(), st.bot_turns);
    assert_eq!(st.error_modes.values().sum::<usize>(), st.bot_turns);
    assert_eq!(st.conversations, 60);
}

#[test]
fn sparsify_rejects_bad_rates() {
    let c = corpus(1, 10);
    assert!(sparsify(&c, 0.0, 0).is_err());
    assert!(sparsify(&c, 1.5, 0).is_err());
    assert_eq!(sparsify(&c, 1.0, 0).unwrap(), c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sparsify_keeps_rounded_count_and_is_monotone(seed in 0u64..1000, lo in 0.01f64..1.0, hi in 0.01f64..1.0) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let c = corpus(seed % 7, 30);
        let n = kept(&c).len();
        let a = sparsify(&c, lo, seed).unwrap();
        let b = sparsify(&c, hi, seed).unwrap();
        let (ka, kb) = (kept(&a), kept(&b));
        prop_assert_eq!(ka.len(), (lo * n as f64).round() as usize);
        prop_assert!(ka.is_subset(&kb));
        prop_assert!(dense_feedback_holds(&a));
        prop_assert_eq!(&a, &sparsify(&c, lo, seed).unwrap());
        // only labels and gold corrections change
        for (x, y) in a.iter().zip(&c) {
            for (tx, ty) in x.turns.iter().zip(&y.turns) {
                prop_assert_eq!(&tx.text, &ty.text);
                prop_assert_eq!(tx.error_mode, ty.error_mode);
                if tx.label() == Label::Unlabeled && ty.label() != Label::Unlabeled {
                    prop_assert!(tx.gold_correction.is_none());
                }
            }
        }
    }
}
