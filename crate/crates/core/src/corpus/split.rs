use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Conversation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub valid_fraction: f64,
    pub test_fraction: f64,
    /// Fraction of topic entities whose conversations form the unseen-topic test set.
    pub unseen_topic_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            valid_fraction: 0.1,
            test_fraction: 0.1,
            unseen_topic_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusSplits {
    pub train: Vec<Conversation>,
    pub valid: Vec<Conversation>,
    pub test: Vec<Conversation>,
    pub test_unseen: Vec<Conversation>,
}

pub fn split_corpus(corpus: &[Conversation], cfg: &SplitConfig) -> CorpusSplits {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut topics: Vec<&str> = corpus
        .iter()
        .map(|c| c.topic.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    topics.shuffle(&mut rng);
    let n_unseen = (cfg.unseen_topic_fraction * topics.len() as f64).round() as usize;
    let unseen: BTreeSet<&str> = topics[..n_unseen.min(topics.len())].iter().copied().collect();

    let mut out = CorpusSplits::default();
    let mut seen = Vec::new();
    for conv in corpus {
        if unseen.contains(conv.topic.as_str()) {
            out.test_unseen.push(conv.clone());
        } else {
            seen.push(conv.clone());
        }
    }
    seen.shuffle(&mut rng);
    let n = seen.len();
    let n_valid = (cfg.valid_fraction * n as f64).round() as usize;
    let n_test = ((cfg.test_fraction * n as f64).round() as usize).min(n - n_valid.min(n));
    let mut rest = seen.into_iter();
    out.valid = rest.by_ref().take(n_valid).collect();
    out.test = rest.by_ref().take(n_test).collect();
    out.train = rest.collect();
    out
}
