#![allow(dead_code)]

use juicer_nn::params::randn;
use juicer_nn::{ModelConfig, Seq2SeqModel, SeqPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config(vocab: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        model_dim: 8,
        n_layers: 2,
        n_heads: 2,
        ffn_dim: 16,
        max_len: 16,
        dropout: 0.0,
    }
}

pub fn random_seq(rng: &mut ChaCha8Rng, vocab: usize, min: usize, max: usize) -> Vec<usize> {
    let len = rng.random_range(min..=max);
    (0..len).map(|_| rng.random_range(4..vocab)).collect()
}

pub fn random_pairs(seed: u64, vocab: usize, n: usize) -> Vec<SeqPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| SeqPair {
            src: random_seq(&mut rng, vocab, 1, 6),
            tgt: random_seq(&mut rng, vocab, 0, 5),
        })
        .collect()
}

/// A model whose classifier head is random rather than zero, so its gradients are exercised.
pub fn director_model(vocab: usize, seed: u64) -> Seq2SeqModel {
    let mut m = Seq2SeqModel::new(tiny_config(vocab), seed, true).unwrap();
    let (w, b) = m.ids.cls.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let (r, c) = m.params.get(w).dim();
    *m.params.get_mut(w) = randn(&mut rng, r, c, 0.5);
    *m.params.get_mut(b) = randn(&mut rng, 1, c, 0.5);
    m
}
