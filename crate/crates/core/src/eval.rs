//! Automatic metrics and the oracle-judged stand-in for human evaluation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Turn};
use crate::dialogue::Responder;
use crate::satisfaction::ReplyJudge;
use crate::{CoreError, Result};

/// Lowercases, strips punctuation, drops the articles a/an/the and splits on whitespace.
pub fn normalize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect();
    cleaned
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .map(String::from)
        .collect()
}

/// Unigram-bag F1 between normalized texts.
pub fn f1_overlap(hypothesis: &str, reference: &str) -> f64 {
    let h = normalize(hypothesis);
    let r = normalize(reference);
    if h.is_empty() || r.is_empty() {
        return if h.is_empty() && r.is_empty() { 1.0 } else { 0.0 };
    }
    let mut bag: HashMap<&str, usize> = HashMap::new();
    for w in &r {
        *bag.entry(w).or_default() += 1;
    }
    let mut common = 0usize;
    for w in &h {
        if let Some(c) = bag.get_mut(w.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    // 2PR/(P+R) with P = c/|h|, R = c/|r|, in a form symmetric in h and r
    2.0 * common as f64 / (h.len() + r.len()) as f64
}

/// Perplexity serialized as a number, or the string "n/a" when not applicable.
mod ppl_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => x.serialize(s),
            None => "n/a".serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Some(x)),
            Raw::Str(s) if s == "n/a" => Ok(None),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("unexpected perplexity {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub arm: String,
    /// Mean F1 against gold corrections on turns that have one.
    pub f1: f64,
    /// Mean F1 over every bot turn: gold correction if present, else the good reply.
    pub f1_all: f64,
    #[serde(with = "ppl_serde")]
    pub perplexity: Option<f64>,
    pub good_rate: f64,
    /// Bot-turn contexts evaluated.
    pub n_examples: usize,
    pub n_gold_turns: usize,
}

/// Fraction of contexts where the generated reply passes the judge (score ≥ 0.5).
pub fn simulated_human_eval(
    model: &dyn Responder,
    judge: &dyn ReplyJudge,
    contexts: &[&[Turn]],
) -> Result<f64> {
    if contexts.is_empty() {
        return Err(CoreError::InvalidInput("no contexts to evaluate".into()));
    }
    let mut good = 0usize;
    for ctx in contexts {
        let reply = model.reply(ctx)?;
        if judge.prob(ctx, &reply, None) >= 0.5 {
            good += 1;
        }
    }
    Ok(good as f64 / contexts.len() as f64)
}

/// Reference reply for bot turn `i`: its gold correction if present, the reply
/// itself if it is good, and nothing for an uncorrected bad reply.
fn reference(turn: &Turn) -> Option<(&str, bool)> {
    if let Some(g) = &turn.gold_correction {
        return Some((g, true));
    }
    match turn.label().is_good() {
        Some(true) => Some((&turn.text, false)),
        _ => None,
    }
}

/// Evaluates one model on every bot-turn context of a split.
pub fn eval_arm(
    arm: &str,
    model: &dyn Responder,
    judge: &dyn ReplyJudge,
    split: &[Conversation],
) -> Result<EvalReport> {
    let mut n = 0usize;
    let mut good = 0usize;
    let (mut f1_gold, mut n_gold) = (0.0, 0usize);
    let (mut f1_all, mut n_ref) = (0.0, 0usize);
    let (mut nll, mut n_tok) = (0.0, 0usize);
    let mut ppl_ok = true;
    for conv in split {
        for i in conv.bot_indices() {
            let ctx = &conv.turns[..i];
            let reply = model.reply(ctx)?;
            n += 1;
            if judge.prob(ctx, &reply, None) >= 0.5 {
                good += 1;
            }
            let Some((r, is_gold)) = reference(&conv.turns[i]) else { continue };
            let f = f1_overlap(&reply, r);
            f1_all += f;
            n_ref += 1;
            if is_gold {
                f1_gold += f;
                n_gold += 1;
            }
            if ppl_ok {
                match model.log_likelihood(ctx, r) {
                    Some(res) => {
                        let (lp, k) = res?;
                        nll -= lp;
                        n_tok += k;
                    }
                    None => ppl_ok = false,
                }
            }
        }
    }
    if n == 0 {
        return Err(CoreError::InvalidInput("evaluation split has no bot turns".into()));
    }
    let mean = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 };
    Ok(EvalReport {
        arm: arm.to_string(),
        f1: mean(f1_gold, n_gold),
        f1_all: mean(f1_all, n_ref),
        perplexity: (ppl_ok && n_tok > 0).then(|| (nll / n_tok as f64).exp()),
        good_rate: good as f64 / n as f64,
        n_examples: n,
        n_gold_turns: n_gold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_hand_cases() {
        assert_eq!(f1_overlap("a b c", "a b c"), 1.0);
        assert_eq!(f1_overlap("x y", "p q"), 0.0);
        assert_eq!(f1_overlap("", ""), 1.0);
        assert_eq!(f1_overlap("", "word"), 0.0);
        assert_eq!(f1_overlap("the", "word"), 0.0);
        let f = f1_overlap("the color of mango is yellow", "mango color is green");
        assert!((f - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn normalization_drops_articles_and_punctuation() {
        assert_eq!(normalize("The Cat, a dog!"), vec!["cat", "dog"]);
        assert_eq!(f1_overlap("cat sat .", "the cat sat"), 1.0);
    }

    #[test]
    fn perplexity_serializes_as_na() {
        let r = EvalReport {
            arm: "x".into(),
            f1: 0.0,
            f1_all: 0.0,
            perplexity: None,
            good_rate: 0.0,
            n_examples: 1,
            n_gold_turns: 0,
        };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"perplexity\":\"n/a\""));
        let back: EvalReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }
}
