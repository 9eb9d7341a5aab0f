//! Candidate generation: greedy, beam search and temperature sampling.

use ndarray::ArrayView1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::infer::log_softmax;
use crate::model::Seq2SeqModel;
use crate::vocab::{BOS_ID, EOS_ID, PAD_ID};
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Strategy {
    Greedy,
    Beam { k: usize },
    Sample { temperature: f64, seed: u64, n: usize },
}

/// Turns one decoding step's head outputs into per-token scores.
pub trait StepScorer {
    fn score(&self, lm: ArrayView1<f64>, cls: Option<ArrayView1<f64>>) -> Vec<f64>;
}

/// Plain language-model scoring: `log p_LM(v | prefix)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LmScorer;

impl StepScorer for LmScorer {
    fn score(&self, lm: ArrayView1<f64>, _cls: Option<ArrayView1<f64>>) -> Vec<f64> {
        log_softmax(lm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Generated ids; the final id is `<eos>` unless `max_new` was reached.
    pub tokens: Vec<usize>,
    /// Sum of per-step scores of the chosen tokens.
    pub score: f64,
}

impl Candidate {
    pub fn finished(&self) -> bool {
        self.tokens.last() == Some(&EOS_ID)
    }

    /// Score divided by the number of generated tokens.
    pub fn normalized_score(&self) -> f64 {
        self.score / self.tokens.len().max(1) as f64
    }

    /// Tokens with the trailing `<eos>` stripped.
    pub fn content(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((&EOS_ID, rest)) => rest,
            _ => &self.tokens,
        }
    }
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn generate(
    model: &Seq2SeqModel,
    src: &[usize],
    strategy: Strategy,
    max_new: usize,
    scorer: &dyn StepScorer,
) -> Result<Vec<Candidate>, NnError> {
    if src.is_empty() {
        return Err(NnError::EmptyInput);
    }
    let max_new = max_new.min(model.cfg.max_len);
    match strategy {
        Strategy::Greedy => beam(model, src, 1, max_new, scorer),
        Strategy::Beam { k } => {
            if k == 0 {
                return Err(NnError::InvalidConfig("beam width must be positive".into()));
            }
            beam(model, src, k, max_new, scorer)
        }
        Strategy::Sample {
            temperature,
            seed,
            n,
        } => {
            if !(temperature > 0.0) {
                return Err(NnError::InvalidConfig("temperature must be positive".into()));
            }
            sample(model, src, temperature, seed, n, max_new, scorer)
        }
    }
}

fn beam(
    model: &Seq2SeqModel,
    src: &[usize],
    k: usize,
    max_new: usize,
    scorer: &dyn StepScorer,
) -> Result<Vec<Candidate>, NnError> {
    let enc = model.encode_source(src)?;
    let mut state = model.start_decode(1);
    let mut alive: Vec<Candidate> = vec![Candidate {
        tokens: Vec::new(),
        score: 0.0,
    }];
    let mut finished: Vec<Candidate> = Vec::new();
    for _ in 0..max_new {
        let inputs: Vec<usize> = alive
            .iter()
            .map(|c| c.tokens.last().copied().unwrap_or(BOS_ID))
            .collect();
        let out = model.step(&enc, &mut state, &inputs)?;
        // (row, token, cumulative score)
        let mut expansions: Vec<(usize, usize, f64)> = Vec::new();
        for (r, cand) in alive.iter().enumerate() {
            let cls = out.cls.as_ref().map(|c| c.row(r));
            let scores = scorer.score(out.lm.row(r), cls);
            for (tok, &s) in top_k(&scores, k).iter().map(|&t| (t, &scores[t])) {
                expansions.push((r, tok, cand.score + s));
            }
        }
        expansions.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });
        let mut next_alive = Vec::new();
        let mut keep_rows = Vec::new();
        for (r, tok, score) in expansions {
            if next_alive.len() == k {
                break;
            }
            let mut tokens = alive[r].tokens.clone();
            tokens.push(tok);
            let cand = Candidate { tokens, score };
            if tok == EOS_ID {
                if finished.len() < k {
                    finished.push(cand);
                }
            } else {
                next_alive.push(cand);
                keep_rows.push(r);
            }
        }
        if finished.len() >= k || next_alive.is_empty() {
            alive.clear();
            break;
        }
        state.reorder(&keep_rows);
        alive = next_alive;
    }
    finished.extend(alive);
    finished.sort_by(|a, b| {
        b.normalized_score()
            .partial_cmp(&a.normalized_score())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    finished.truncate(k);
    Ok(finished)
}

fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len())
        .filter(|&i| i != PAD_ID && i != BOS_ID)
        .collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

fn sample(
    model: &Seq2SeqModel,
    src: &[usize],
    temperature: f64,
    seed: u64,
    n: usize,
    max_new: usize,
    scorer: &dyn StepScorer,
) -> Result<Vec<Candidate>, NnError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let enc = model.encode_source(src)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = model.start_decode(n);
    let mut cands = vec![
        Candidate {
            tokens: Vec::new(),
            score: 0.0,
        };
        n
    ];
    let mut probs = Vec::new();
    for _ in 0..max_new {
        if cands.iter().all(Candidate::finished) {
            break;
        }
        let inputs: Vec<usize> = cands
            .iter()
            .map(|c| match c.tokens.last() {
                None => BOS_ID,
                Some(&EOS_ID) => PAD_ID,
                Some(&t) => t,
            })
            .collect();
        let out = model.step(&enc, &mut state, &inputs)?;
        for (r, cand) in cands.iter_mut().enumerate() {
            if cand.finished() {
                continue;
            }
            let cls = out.cls.as_ref().map(|c| c.row(r));
            let scores = scorer.score(out.lm.row(r), cls);
            probs.clear();
            let max = scores
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != PAD_ID && *i != BOS_ID)
                .map(|(_, &s)| s)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (i, &s) in scores.iter().enumerate() {
                let w = if i == PAD_ID || i == BOS_ID {
                    0.0
                } else {
                    ((s - max) / temperature).exp()
                };
                total += w;
                probs.push(w);
            }
            let mut u = rng.random::<f64>() * total;
            let mut tok = probs.len() - 1;
            for (i, &w) in probs.iter().enumerate() {
                if w > 0.0 && u < w {
                    tok = i;
                    break;
                }
                u -= w;
            }
            cand.tokens.push(tok);
            cand.score += scores[tok];
        }
    }
    Ok(cands)
}
