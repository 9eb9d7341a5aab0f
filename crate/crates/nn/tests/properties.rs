use juicer_nn::generate::argmax;
use juicer_nn::infer::log_softmax;
use juicer_nn::ndarray::Array1;
use juicer_nn::tape::softplus;
use juicer_nn::Vocab;
use proptest::prelude::*;

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-z]{1,6}", 1..20)
}

proptest! {
    #[test]
    fn log_softmax_is_normalized_and_shift_invariant(xs in prop::collection::vec(-50.0f64..50.0, 1..40), c in -100.0f64..100.0) {
        let a = log_softmax(Array1::from(xs.clone()).view());
        let total: f64 = a.iter().map(|v| v.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let b = log_softmax(Array1::from(shifted).view());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn argmax_takes_the_first_maximum(xs in prop::collection::vec(0u8..4, 1..30)) {
        let f: Vec<f64> = xs.iter().map(|&x| x as f64).collect();
        let i = argmax(&f);
        let max = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(f[i], max);
        prop_assert!(f[..i].iter().all(|&x| x < max));
    }

    #[test]
    fn softplus_matches_its_definition(x in -30.0f64..30.0) {
        let direct = (1.0 + x.exp()).ln();
        prop_assert!((softplus(x) - direct).abs() < 1e-9 * direct.max(1.0));
        prop_assert!(softplus(x) > 0.0);
    }

    #[test]
    fn vocab_round_trips_known_words(ws in words()) {
        let vocab = Vocab::new(&ws);
        let text = ws.join(" ");
        let ids = vocab.encode_strict(&text).unwrap();
        prop_assert_eq!(vocab.decode(&ids), text);
        prop_assert!(ids.iter().all(|&i| i >= 4 && i < vocab.len()));
    }
}
