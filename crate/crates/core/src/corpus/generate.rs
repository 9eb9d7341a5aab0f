use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::world::{fill, WorldSpec};
use super::{Conversation, ErrorMode, Label, Turn};
use crate::CoreError;

/// Knobs of the synthetic dialogue generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusParams {
    pub n_conversations: usize,
    /// Questions asked per conversation (each gets a first-attempt bot reply).
    pub turns_per_conv: usize,
    /// Mean probability that a reply is bad.
    pub p_bad: f64,
    /// Probability that the reply after feedback is forced to the correct answer.
    pub p_self_correct: f64,
    /// Total attempts per question before the user gives up.
    pub max_attempts: usize,
    pub p_vague_feedback: f64,
    /// Probability that constructive feedback also states the correct value.
    pub p_hint: f64,
    /// Probability that a question is about the conversation topic.
    pub p_on_topic: f64,
    pub p_acknowledge: f64,
    /// Relative frequency of wrong_value, topic_change, irrelevant errors.
    pub error_weights: [f64; 3],
    /// Fraction of facts the bot tends to get wrong. Zero disables the skew.
    pub hard_fact_fraction: f64,
    /// Bad-reply rate on hard facts is `min(0.95, hard_multiplier · p_bad)`; easy facts
    /// absorb the rest so that the mean over facts stays `p_bad`.
    pub hard_multiplier: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            n_conversations: 1000,
            turns_per_conv: 4,
            p_bad: 0.35,
            p_self_correct: 0.5,
            max_attempts: 3,
            p_vague_feedback: 0.2,
            p_hint: 0.5,
            p_on_topic: 0.75,
            p_acknowledge: 0.5,
            error_weights: [0.5, 0.25, 0.25],
            hard_fact_fraction: 0.0,
            hard_multiplier: 2.5,
        }
    }
}

impl CorpusParams {
    pub fn new(n_conversations: usize, turns_per_conv: usize, p_bad: f64, p_self_correct: f64) -> Self {
        CorpusParams {
            n_conversations,
            turns_per_conv,
            p_bad,
            p_self_correct,
            ..CorpusParams::default()
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let bad = |m: &str| Err(CoreError::InvalidParams(m.to_string()));
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        if self.turns_per_conv < 2 {
            return bad("turns_per_conv must be at least 2");
        }
        if !(0.0..1.0).contains(&self.p_bad) {
            return bad("p_bad must lie in [0, 1)");
        }
        if !frac(self.p_self_correct)
            || !frac(self.p_vague_feedback)
            || !frac(self.p_hint)
            || !frac(self.p_on_topic)
            || !frac(self.p_acknowledge)
            || !(0.0..1.0).contains(&self.hard_fact_fraction)
        {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive");
        }
        if self.error_weights.iter().any(|w| *w < 0.0) || self.error_weights.iter().sum::<f64>() <= 0.0 {
            return bad("error_weights must be nonnegative with a positive sum");
        }
        if self.hard_multiplier < 1.0 {
            return bad("hard_multiplier must be at least 1");
        }
        Ok(())
    }

    /// (hard, easy) per-fact bad-reply probabilities.
    pub fn fact_error_rates(&self) -> (f64, f64) {
        let h = self.hard_fact_fraction;
        if h == 0.0 {
            return (self.p_bad, self.p_bad);
        }
        let hard = (self.hard_multiplier * self.p_bad).min(0.95).max(self.p_bad);
        let easy = ((self.p_bad - h * hard) / (1.0 - h)).max(0.0);
        (hard, easy)
    }
}

/// Counters recorded while generating, for auditing derived datasets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub bot_turns: usize,
    pub bad_turns: usize,
    /// Re-answers forced correct by the self-correction mechanism.
    pub forced_self_corrections: usize,
    /// Bad turns whose next bot turn (after feedback) is good, forced or not.
    pub good_followups: usize,
}

struct Gen<'w> {
    world: &'w WorldSpec,
    params: &'w CorpusParams,
    rng: ChaCha8Rng,
    hard: Vec<Vec<bool>>,
    log: GenerationLog,
}

pub fn generate_corpus(world: &WorldSpec, seed: u64, params: &CorpusParams) -> Result<Vec<Conversation>, CoreError> {
    generate_corpus_logged(world, seed, params).map(|(c, _)| c)
}

pub fn generate_corpus_logged(
    world: &WorldSpec,
    seed: u64,
    params: &CorpusParams,
) -> Result<(Vec<Conversation>, GenerationLog), CoreError> {
    world.validate()?;
    if world.entities.len() < 2 {
        return Err(CoreError::InvalidWorld("world needs at least two entities".into()));
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_facts = world.n_facts();
    let n_hard = (params.hard_fact_fraction * n_facts as f64).round() as usize;
    let mut flat: Vec<usize> = (0..n_facts).collect();
    flat.shuffle(&mut rng);
    let n_attr = world.attributes.len();
    let mut hard = vec![vec![false; n_attr]; world.entities.len()];
    for &f in &flat[..n_hard] {
        hard[f / n_attr][f % n_attr] = true;
    }
    let mut g = Gen {
        world,
        params,
        rng,
        hard,
        log: GenerationLog::default(),
    };
    let corpus = (0..params.n_conversations)
        .map(|i| g.conversation(format!("s{seed}-{i:06}")))
        .collect();
    Ok((corpus, g.log))
}

impl Gen<'_> {
    fn conversation(&mut self, id: String) -> Conversation {
        let w = self.world;
        let topic = self.rng.random_range(0..w.entities.len());
        let mut attr_order: Vec<usize> = (0..w.attributes.len()).collect();
        attr_order.shuffle(&mut self.rng);
        let mut turns = Vec::new();
        let mut acknowledge = false;
        for q in 0..self.params.turns_per_conv {
            let ent = if self.rng.random_bool(self.params.p_on_topic) {
                topic
            } else {
                self.other_entity(topic)
            };
            let attr = if ent == topic {
                attr_order[q % attr_order.len()]
            } else {
                self.rng.random_range(0..w.attributes.len())
            };
            let mut question = fill(
                w.templates.question.choose(&mut self.rng).expect("templates"),
                &[("attr", &w.attributes[attr]), ("ent", &w.entities[ent])],
            );
            if acknowledge && self.rng.random_bool(self.params.p_acknowledge) {
                let ack = w.templates.acknowledgement.choose(&mut self.rng).expect("templates");
                question = format!("{ack} {question}");
            }
            turns.push(Turn::human(question, false));

            let mut resolved = false;
            let mut prev_bad = false;
            for attempt in 0..self.params.max_attempts {
                let forced = prev_bad && self.rng.random_bool(self.params.p_self_correct);
                let is_bad = !forced && self.rng.random_bool(self.error_rate(ent, attr));
                self.log.bot_turns += 1;
                if prev_bad && !is_bad {
                    self.log.good_followups += 1;
                    if forced {
                        self.log.forced_self_corrections += 1;
                    }
                }
                if !is_bad {
                    turns.push(Turn::bot(w.answer(ent, attr), Label::HumanUp, ErrorMode::None));
                    resolved = true;
                    break;
                }
                self.log.bad_turns += 1;
                let (reply, mode, slots) = self.bad_reply(ent, attr);
                let mut bot = Turn::bot(reply, Label::HumanDown, mode);
                bot.gold_correction = Some(w.answer(ent, attr));
                turns.push(bot);
                turns.push(Turn::human(self.feedback(ent, attr, mode, &slots), true));
                prev_bad = true;
                if attempt + 1 == self.params.max_attempts {
                    break;
                }
            }
            if !resolved {
                // the user gave up after repeated failures; end with their feedback
                break;
            }
            acknowledge = true;
        }
        Conversation {
            conversation_id: id,
            topic: w.entities[topic].clone(),
            turns,
        }
    }

    fn error_rate(&self, ent: usize, attr: usize) -> f64 {
        let (hard, easy) = self.params.fact_error_rates();
        if self.hard[ent][attr] {
            hard
        } else {
            easy
        }
    }

    fn other_entity(&mut self, not: usize) -> usize {
        let n = self.world.entities.len();
        let k = self.rng.random_range(0..n - 1);
        if k >= not {
            k + 1
        } else {
            k
        }
    }

    /// Returns (text, mode, [bad value, other entity]) for a bad reply.
    fn bad_reply(&mut self, ent: usize, attr: usize) -> (String, ErrorMode, [String; 2]) {
        let w = self.world;
        let weights = self.params.error_weights;
        let total: f64 = weights.iter().sum();
        let mut u = self.rng.random::<f64>() * total;
        let mut mode = ErrorMode::BAD[2];
        for (m, wt) in ErrorMode::BAD.iter().zip(weights) {
            if u < wt {
                mode = *m;
                break;
            }
            u -= wt;
        }
        match mode {
            ErrorMode::WrongValue => {
                let truth = w.fact(ent, attr);
                let wrong: Vec<&String> = w.values[attr].iter().filter(|v| *v != truth).collect();
                let bad = (*wrong.choose(&mut self.rng).expect("several values")).clone();
                let text = fill(
                    &w.templates.answer,
                    &[("attr", &w.attributes[attr]), ("ent", &w.entities[ent]), ("val", &bad)],
                );
                (text, mode, [bad, String::new()])
            }
            ErrorMode::TopicChange => {
                let e2 = self.other_entity(ent);
                let a2 = self.rng.random_range(0..w.attributes.len());
                let text = fill(
                    w.templates.topic_change.choose(&mut self.rng).expect("templates"),
                    &[("ent2", &w.entities[e2]), ("attr2", &w.attributes[a2]), ("val2", w.fact(e2, a2))],
                );
                (text, mode, [String::new(), w.entities[e2].clone()])
            }
            _ => {
                let text = w.templates.irrelevant.choose(&mut self.rng).expect("templates").clone();
                (text, ErrorMode::Irrelevant, [String::new(), String::new()])
            }
        }
    }

    fn feedback(&mut self, ent: usize, attr: usize, mode: ErrorMode, slots: &[String; 2]) -> String {
        let w = self.world;
        let t = &w.templates;
        if self.rng.random_bool(self.params.p_vague_feedback) {
            return t.feedback_vague.choose(&mut self.rng).expect("templates").clone();
        }
        let pool = match mode {
            ErrorMode::WrongValue => &t.feedback_wrong_value,
            ErrorMode::TopicChange => &t.feedback_topic_change,
            _ => &t.feedback_irrelevant,
        };
        let val = w.fact(ent, attr);
        let fill_slots = [
            ("ent", w.entities[ent].as_str()),
            ("attr", w.attributes[attr].as_str()),
            ("val", val),
            ("bad", slots[0].as_str()),
            ("ent2", slots[1].as_str()),
        ];
        let mut text = fill(pool.choose(&mut self.rng).expect("templates"), &fill_slots);
        if self.rng.random_bool(self.params.p_hint) {
            let hint = fill(t.hint.choose(&mut self.rng).expect("templates"), &fill_slots);
            text = format!("{text} {hint}");
        }
        text
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_world, validate_corpus, Oracle};

    fn world() -> WorldSpec {
        generate_world(3, 20, 4).unwrap()
    }

    #[test]
    fn zero_error_rate_gives_all_up_and_no_feedback() {
        let c = generate_corpus(&world(), 1, &CorpusParams::new(50, 4, 0.0, 0.5)).unwrap();
        for conv in &c {
            assert_eq!(conv.turns.len(), 8);
            for t in &conv.turns {
                assert!(!t.is_feedback());
                if t.is_bot() {
                    assert_eq!(t.label, Some(Label::HumanUp));
                }
            }
        }
    }

    #[test]
    fn bad_fraction_concentrates_at_p_bad() {
        let (c, log) = generate_corpus_logged(&world(), 2, &CorpusParams::new(1000, 4, 0.5, 0.0)).unwrap();
        let (mut bad, mut total) = (0, 0);
        for t in c.iter().flat_map(|c| &c.turns).filter(|t| t.is_bot()) {
            total += 1;
            bad += (t.label == Some(Label::HumanDown)) as usize;
        }
        assert_eq!((bad, total), (log.bad_turns, log.bot_turns));
        let frac = bad as f64 / total as f64;
        assert!((frac - 0.5).abs() < 0.03, "{frac}");
    }

    #[test]
    fn oracle_agrees_with_labels_everywhere() {
        let w = world();
        let o = Oracle::new(&w);
        let params = CorpusParams {
            hard_fact_fraction: 0.3,
            ..CorpusParams::new(300, 4, 0.4, 0.5)
        };
        let c = generate_corpus(&w, 4, &params).unwrap();
        validate_corpus(&c).unwrap();
        for conv in &c {
            for (i, t) in conv.turns.iter().enumerate().filter(|(_, t)| t.is_bot()) {
                let good = o.judge(&conv.turns[..i], &t.text);
                assert_eq!(good, t.label == Some(Label::HumanUp), "{}: {}", conv.conversation_id, t.text);
                assert_eq!(good, !t.error_mode().is_bad());
                if !good {
                    let gold = t.gold_correction.as_deref().unwrap();
                    assert!(o.judge(&conv.turns[..i], gold));
                    assert!(conv.turns[i + 1].is_feedback());
                }
            }
        }
    }

    #[test]
    fn mean_error_rate_is_preserved_under_skew() {
        let p = CorpusParams {
            hard_fact_fraction: 0.3,
            ..CorpusParams::new(1, 2, 0.3, 0.0)
        };
        let (hard, easy) = p.fact_error_rates();
        assert!(hard > easy);
        assert!((0.3 * hard + 0.7 * easy - 0.3).abs() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic() {
        let p = CorpusParams::new(20, 3, 0.4, 0.5);
        assert_eq!(generate_corpus(&world(), 9, &p).unwrap(), generate_corpus(&world(), 9, &p).unwrap());
        assert_ne!(generate_corpus(&world(), 9, &p).unwrap(), generate_corpus(&world(), 10, &p).unwrap());
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(generate_corpus(&world(), 1, &CorpusParams::new(5, 1, 0.3, 0.5)).is_err());
        assert!(generate_corpus(&world(), 1, &CorpusParams::new(5, 3, 1.0, 0.5)).is_err());
        assert!(generate_corpus(&world(), 1, &CorpusParams::new(5, 3, 0.3, 1.5)).is_err());
    }
}
