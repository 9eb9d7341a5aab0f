//! Text embedders for similarity filtering.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array1;

use crate::model::EncoderClassifier;
use crate::vocab::Vocab;

#[derive(Debug, Clone, PartialEq)]
pub enum TextVector {
    /// Token → weight, L2-normalized (empty map for empty text).
    Sparse(BTreeMap<String, f64>),
    Dense(Vec<f64>),
}

impl TextVector {
    pub fn norm(&self) -> f64 {
        match self {
            TextVector::Sparse(m) => m.values().map(|v| v * v).sum::<f64>().sqrt(),
            TextVector::Dense(v) => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }

    fn dot(&self, other: &TextVector) -> f64 {
        match (self, other) {
            (TextVector::Sparse(a), TextVector::Sparse(b)) => {
                let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
                small
                    .iter()
                    .filter_map(|(k, v)| large.get(k).map(|w| v * w))
                    .sum()
            }
            (TextVector::Dense(a), TextVector::Dense(b)) => {
                assert_eq!(a.len(), b.len(), "dense vectors of different width");
                a.iter().zip(b).map(|(x, y)| x * y).sum()
            }
            _ => panic!("cannot compare sparse and dense vectors"),
        }
    }

    /// Cosine similarity; 0 when either side is the zero vector.
    pub fn cosine(&self, other: &TextVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return 0.0;
        }
        (self.dot(other) / denom).clamp(-1.0, 1.0)
    }
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> TextVector;

    fn similarity(&self, a: &str, b: &str) -> f64 {
        self.embed(a).cosine(&self.embed(b))
    }
}

/// Bag-of-words TF-IDF with smoothed idf `ln((1+N)/(1+df)) + 1`.
#[derive(Debug, Clone, Default)]
pub struct TfIdfEmbedder {
    n_docs: usize,
    df: BTreeMap<String, usize>,
}

impl TfIdfEmbedder {
    pub fn fit<'a, I: IntoIterator<Item = &'a str>>(docs: I) -> Self {
        let mut e = TfIdfEmbedder::default();
        for doc in docs {
            e.n_docs += 1;
            let uniq: BTreeSet<&str> = doc.split_whitespace().collect();
            for t in uniq {
                *e.df.entry(t.to_string()).or_default() += 1;
            }
        }
        e
    }

    pub fn idf(&self, token: &str) -> f64 {
        let df = self.df.get(token).copied().unwrap_or(0);
        ((1 + self.n_docs) as f64 / (1 + df) as f64).ln() + 1.0
    }
}

impl Embedder for TfIdfEmbedder {
    fn embed(&self, text: &str) -> TextVector {
        let mut tf: BTreeMap<String, f64> = BTreeMap::new();
        for t in text.split_whitespace() {
            *tf.entry(t.to_string()).or_default() += 1.0;
        }
        for (t, v) in tf.iter_mut() {
            *v *= self.idf(t);
        }
        let norm = tf.values().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            tf.values_mut().for_each(|v| *v /= norm);
        }
        TextVector::Sparse(tf)
    }
}

/// Mean-pooled final encoder states of a trained encoder, L2-normalized.
#[derive(Debug, Clone)]
pub struct EncoderEmbedder {
    pub model: EncoderClassifier,
    pub vocab: Vocab,
}

impl Embedder for EncoderEmbedder {
    fn embed(&self, text: &str) -> TextVector {
        let mut ids = self.vocab.encode(text);
        if ids.is_empty() {
            return TextVector::Dense(vec![0.0; self.model.cfg.model_dim]);
        }
        ids.truncate(self.model.cfg.max_len);
        let pooled: Array1<f64> = self.model.pooled(&ids);
        let norm = pooled.dot(&pooled).sqrt();
        let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        TextVector::Dense(pooled.iter().map(|x| x * scale).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb() -> TfIdfEmbedder {
        TfIdfEmbedder::fit(["the cat sat", "the dog ran", "a bird flew"])
    }

    #[test]
    fn identical_strings_have_cosine_one() {
        let e = emb();
        assert!((e.similarity("the cat sat", "the cat sat") - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_strings_have_cosine_zero() {
        assert_eq!(emb().similarity("the cat", "bird flew"), 0.0);
    }

    #[test]
    fn empty_text_embeds_to_zero() {
        let v = emb().embed("");
        assert_eq!(v.norm(), 0.0);
        assert_eq!(emb().similarity("", "the cat"), 0.0);
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let e = emb();
        for t in ["the cat sat", "unseen words here", "dog dog dog"] {
            assert!((e.embed(t).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rarer_tokens_weigh_more() {
        let e = emb();
        assert!(e.idf("cat") > e.idf("the"));
        assert!(e.idf("never") > e.idf("cat"));
    }
}
