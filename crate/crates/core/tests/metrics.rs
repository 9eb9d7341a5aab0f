use std::collections::HashSet;

use juicer_core::director::{label_overlap, label_standard, overlap_labels, overlap_stats, stopwords, SequenceLabel};
use juicer_core::eval::f1_overlap;
use juicer_core::pipeline::{calibrate_threshold, rerank_by_scores};
use proptest::prelude::*;

const WORDS: &[&str] = &["red", "blue", "castle", "is", "the", "a", "of", "tower", "green", ".", "in", "an"];

fn sentence() -> impl Strategy<Value = Vec<&'static str>> {
    prop::collection::vec(prop::sample::select(WORDS), 0..10)
}

proptest! {
    #[test]
    fn f1_is_symmetric_and_bounded(a in sentence(), b in sentence()) {
        let (a, b) = (a.join(" "), b.join(" "));
        let f = f1_overlap(&a, &b);
        prop_assert_eq!(f, f1_overlap(&b, &a));
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn f1_ignores_order_and_articles(a in sentence(), b in sentence(), k in 0usize..10) {
        let mut shuffled = a.clone();
        shuffled.rotate_left(k.min(a.len()));
        shuffled.reverse();
        let f = f1_overlap(&a.join(" "), &b.join(" "));
        prop_assert_eq!(f, f1_overlap(&shuffled.join(" "), &b.join(" ")));
        let with_article = format!("the {} a", a.join(" "));
        prop_assert_eq!(f, f1_overlap(&with_article, &b.join(" ")));
    }

    #[test]
    fn overlap_labels_dominate_standard_negatives(bad in prop::collection::vec(0usize..12, 1..15), gold in prop::collection::vec(0usize..12, 0..15)) {
        let std = label_standard(vec![1], bad.clone(), SequenceLabel::Negative).unwrap();
        let ov = label_overlap(vec![1], bad.clone(), &gold);
        prop_assert_eq!(std.labels.len(), ov.labels.len());
        prop_assert!(std.labels.iter().zip(&ov.labels).all(|(s, o)| o >= s));
        for (t, l) in bad.iter().zip(&ov.labels) {
            prop_assert_eq!(*l == 1, gold.contains(t));
        }
    }

    #[test]
    fn overlap_fractions_partition(pairs in prop::collection::vec((sentence(), sentence()), 1..6)) {
        let pairs: Vec<(Vec<String>, Vec<String>)> = pairs
            .into_iter()
            .map(|(a, b)| (a.into_iter().map(String::from).collect(), b.into_iter().map(String::from).collect()))
            .collect();
        let stop: HashSet<String> = stopwords();
        let s = overlap_stats(&pairs, &stop).unwrap();
        prop_assert!((s.stopword_fraction + s.content_fraction - s.overlap_fraction).abs() < 1e-12);
        let n: usize = pairs.iter().map(|p| p.0.len()).sum();
        prop_assert_eq!(s.n_tokens, n);
        let hits: usize = pairs.iter().map(|(a, b)| overlap_labels(a, b).iter().map(|&x| x as usize).sum::<usize>()).sum();
        if n > 0 {
            prop_assert!((s.overlap_fraction - hits as f64 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn rerank_is_permutation_invariant(scores in prop::collection::vec(0u32..1000, 1..60), rot in 0usize..60) {
        let scores: Vec<f64> = scores.into_iter().map(|s| s as f64 / 1000.0).collect();
        let mut rotated = scores.clone();
        rotated.rotate_left(rot % scores.len());
        let pick = |s: &[f64]| rerank_by_scores(s).unwrap().map(|i| s[i]);
        prop_assert_eq!(pick(&scores), pick(&rotated));
        let max = scores.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert_eq!(pick(&scores).is_none(), max < 0.5);
    }

    #[test]
    fn calibrated_threshold_passes_the_target_share(scores in prop::collection::vec(-1.0f64..1.0, 1..80), rate in 0.05f64..1.0) {
        let t = calibrate_threshold(&scores, rate);
        let passed = scores.iter().filter(|&&s| s >= t).count();
        prop_assert!(passed >= (rate * scores.len() as f64).ceil() as usize);
    }
}

#[test]
fn rerank_of_nothing_is_an_error() {
    assert!(rerank_by_scores(&[]).is_err());
}
