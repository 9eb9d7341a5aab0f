//! Synthetic entity-attribute world, reply/feedback templates and the ground-truth
//! satisfaction oracle.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ErrorMode, Turn};
use crate::CoreError;

pub const VALUES_PER_ATTRIBUTE: usize = 6;

const ATTRIBUTES: &[(&str, &[&str])] = &[
    ("color", &["red", "blue", "green", "yellow", "purple", "orange"]),
    ("size", &["tiny", "small", "medium", "large", "huge", "giant"]),
    ("taste", &["sweet", "sour", "bitter", "salty", "spicy", "bland"]),
    ("origin", &["north", "south", "east", "west", "coast", "valley"]),
    ("shape", &["round", "square", "flat", "long", "curved", "oval"]),
    ("texture", &["soft", "hard", "smooth", "rough", "sticky", "crunchy"]),
    ("smell", &["fresh", "musty", "floral", "smoky", "earthy", "fruity"]),
    ("season", &["spring", "summer", "autumn", "winter", "monsoon", "dry"]),
];

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// Reply, feedback and follow-up templates. Placeholders: `{ent}`, `{attr}`, `{val}`
/// (the correct value), `{bad}` (the value in the bad reply), `{ent2}`, `{attr2}`, `{val2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Templates {
    pub question: Vec<String>,
    pub acknowledgement: Vec<String>,
    pub answer: String,
    pub topic_change: Vec<String>,
    pub irrelevant: Vec<String>,
    pub feedback_wrong_value: Vec<String>,
    pub feedback_topic_change: Vec<String>,
    pub feedback_irrelevant: Vec<String>,
    pub feedback_vague: Vec<String>,
    pub hint: Vec<String>,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            question: strings(&["what is the {attr} of {ent} ?", "do you know the {attr} of {ent} ?"]),
            acknowledgement: strings(&["thanks !", "ok .", "cool .", "i see ."]),
            answer: "the {attr} of {ent} is {val} .".into(),
            topic_change: strings(&[
                "have you heard of {ent2} ? its {attr2} is {val2} .",
                "let us talk about {ent2} instead , its {attr2} is {val2} .",
            ]),
            irrelevant: strings(&[
                "i like to go hiking on weekends .",
                "my favorite movie is about space .",
                "i had pasta for lunch today .",
                "do you like music ?",
                "the weather is nice here .",
            ]),
            feedback_wrong_value: strings(&[
                "no , the {attr} of {ent} is not {bad} .",
                "that is wrong , {ent} is not {bad} .",
            ]),
            feedback_topic_change: strings(&[
                "i asked about the {attr} of {ent} , not about {ent2} .",
                "you changed the topic , i want the {attr} of {ent} .",
            ]),
            feedback_irrelevant: strings(&[
                "that does not answer my question about the {attr} of {ent} .",
                "please just tell me the {attr} of {ent} .",
            ]),
            feedback_vague: strings(&["you are talking nonsense !", "that is not right .", "hmm , no ."]),
            hint: strings(&["it should be {val} .", "i think it is {val} ."]),
        }
    }
}

impl Templates {
    fn all(&self) -> impl Iterator<Item = &String> {
        self.question
            .iter()
            .chain(&self.acknowledgement)
            .chain(std::iter::once(&self.answer))
            .chain(&self.topic_change)
            .chain(&self.irrelevant)
            .chain(&self.feedback_wrong_value)
            .chain(&self.feedback_topic_change)
            .chain(&self.feedback_irrelevant)
            .chain(&self.feedback_vague)
            .chain(&self.hint)
    }

    /// Literal template words (placeholders excluded).
    pub fn words(&self) -> BTreeSet<String> {
        self.all()
            .flat_map(|t| t.split_whitespace())
            .filter(|w| !w.starts_with('{'))
            .map(str::to_string)
            .collect()
    }

    /// Longest template in tokens, counting each placeholder as one token.
    pub fn max_len(&self) -> usize {
        self.all().map(|t| t.split_whitespace().count()).max().unwrap_or(0)
    }
}

/// Fills `{key}` placeholders.
pub fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    template
        .split_whitespace()
        .map(|w| {
            slots
                .iter()
                .find(|(k, _)| w.len() == k.len() + 2 && w.starts_with('{') && &w[1..w.len() - 1] == *k)
                .map_or(w, |(_, v)| v)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub entities: Vec<String>,
    pub attributes: Vec<String>,
    /// `values[a]` is the value vocabulary of attribute `a`; vocabularies are disjoint.
    pub values: Vec<Vec<String>>,
    /// `facts[e][a]` is the true value of attribute `a` for entity `e`.
    pub facts: Vec<Vec<String>>,
    pub templates: Templates,
}

impl WorldSpec {
    pub fn fact(&self, entity: usize, attribute: usize) -> &str {
        &self.facts[entity][attribute]
    }

    pub fn n_facts(&self) -> usize {
        self.facts.iter().map(Vec::len).sum()
    }

    /// Every token that any template expansion can produce.
    pub fn tokens(&self) -> BTreeSet<String> {
        let mut out = self.templates.words();
        out.extend(self.entities.iter().cloned());
        out.extend(self.attributes.iter().cloned());
        out.extend(self.values.iter().flatten().cloned());
        out
    }

    pub fn answer(&self, entity: usize, attribute: usize) -> String {
        fill(
            &self.templates.answer,
            &[
                ("ent", &self.entities[entity]),
                ("attr", &self.attributes[attribute]),
                ("val", self.fact(entity, attribute)),
            ],
        )
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let bad = |m: &str| Err(CoreError::InvalidWorld(m.to_string()));
        if self.entities.is_empty() || self.attributes.is_empty() {
            return bad("world has no entities or attributes");
        }
        if self.values.len() != self.attributes.len() || self.facts.len() != self.entities.len() {
            return bad("values/facts shape mismatch");
        }
        for (e, row) in self.facts.iter().enumerate() {
            if row.len() != self.attributes.len() {
                return bad("facts must be total over entities x attributes");
            }
            for (a, v) in row.iter().enumerate() {
                if !self.values[a].contains(v) {
                    return bad(&format!("fact ({e},{a}) value {v:?} not in attribute vocabulary"));
                }
            }
        }
        let mut seen = HashSet::new();
        for w in self.entities.iter().chain(&self.attributes).chain(self.values.iter().flatten()) {
            if !seen.insert(w.as_str()) {
                return bad(&format!("token {w:?} is used for more than one role"));
            }
        }
        Ok(())
    }
}

pub fn generate_world(seed: u64, n_entities: usize, n_attributes: usize) -> Result<WorldSpec, CoreError> {
    if n_entities < 2 || n_attributes < 2 {
        return Err(CoreError::InvalidWorld(
            "need at least 2 entities and 2 attributes".into(),
        ));
    }
    let templates = Templates::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attributes = Vec::with_capacity(n_attributes);
    let mut values = Vec::with_capacity(n_attributes);
    for a in 0..n_attributes {
        match ATTRIBUTES.get(a) {
            Some((name, vals)) => {
                attributes.push(name.to_string());
                values.push(strings(vals));
            }
            None => {
                attributes.push(format!("attr{a}"));
                values.push((0..VALUES_PER_ATTRIBUTE).map(|k| format!("a{a}v{k}")).collect());
            }
        }
    }

    let mut reserved: HashSet<String> = templates.words().into_iter().collect();
    reserved.extend(attributes.iter().cloned());
    reserved.extend(values.iter().flatten().cloned());
    let max_names = ONSETS.len().pow(2) * VOWELS.len().pow(2);
    if n_entities > max_names / 2 {
        return Err(CoreError::InvalidWorld(format!(
            "at most {} entities are supported",
            max_names / 2
        )));
    }
    let mut entities = Vec::with_capacity(n_entities);
    while entities.len() < n_entities {
        let name: String = (0..2)
            .map(|_| {
                format!(
                    "{}{}",
                    ONSETS[rng.random_range(0..ONSETS.len())],
                    VOWELS[rng.random_range(0..VOWELS.len())]
                )
            })
            .collect();
        if reserved.insert(name.clone()) {
            entities.push(name);
        }
    }
    let facts = (0..n_entities)
        .map(|_| {
            values
                .iter()
                .map(|vals| vals.choose(&mut rng).expect("nonempty").clone())
                .collect()
        })
        .collect();
    let world = WorldSpec {
        entities,
        attributes,
        values,
        facts,
        templates,
    };
    world.validate()?;
    Ok(world)
}

/// Deterministic judge of whether a reply states the requested fact.
#[derive(Debug, Clone)]
pub struct Oracle {
    world: WorldSpec,
    entity_index: HashMap<String, usize>,
    attribute_index: HashMap<String, usize>,
    /// value token → owning attribute
    value_attr: HashMap<String, usize>,
}

impl Oracle {
    pub fn new(world: &WorldSpec) -> Self {
        let index = |xs: &[String]| xs.iter().enumerate().map(|(i, x)| (x.clone(), i)).collect();
        let mut value_attr = HashMap::new();
        for (a, vals) in world.values.iter().enumerate() {
            for v in vals {
                value_attr.insert(v.clone(), a);
            }
        }
        Oracle {
            world: world.clone(),
            entity_index: index(&world.entities),
            attribute_index: index(&world.attributes),
            value_attr,
        }
    }

    pub fn world(&self) -> &WorldSpec {
        &self.world
    }

    /// (entity, attribute) asked in a human question, if it names both.
    pub fn parse_question(&self, text: &str) -> Option<(usize, usize)> {
        let mut ent = None;
        let mut attr = None;
        for w in text.split_whitespace() {
            if ent.is_none() {
                ent = self.entity_index.get(w).copied();
            }
            if attr.is_none() {
                attr = self.attribute_index.get(w).copied();
            }
        }
        Some((ent?, attr?))
    }

    /// The question asked by the most recent non-feedback human turn.
    pub fn current_question(&self, context: &[Turn]) -> Option<(usize, usize)> {
        context
            .iter()
            .rev()
            .find(|t| !t.is_bot() && !t.is_feedback())
            .and_then(|t| self.parse_question(&t.text))
    }

    pub fn is_good_for(&self, question: (usize, usize), reply: &str) -> bool {
        let (e, a) = question;
        let want_ent = &self.world.entities[e];
        let want_val = self.world.fact(e, a);
        let mut has_ent = false;
        let mut has_val = false;
        for w in reply.split_whitespace() {
            if let Some(&other) = self.entity_index.get(w) {
                if other != e {
                    return false;
                }
                has_ent |= w == want_ent;
            }
            if self.value_attr.get(w) == Some(&a) {
                if w != want_val {
                    return false;
                }
                has_val = true;
            }
        }
        has_ent && has_val
    }

    /// Whether `reply` is a satisfactory answer given the preceding turns.
    pub fn judge(&self, context: &[Turn], reply: &str) -> bool {
        self.current_question(context)
            .is_some_and(|q| self.is_good_for(q, reply))
    }

    /// Best-guess error mode of a reply; `irrelevant` when nothing more specific applies.
    pub fn diagnose(&self, context: &[Turn], reply: &str) -> ErrorMode {
        let Some((e, a)) = self.current_question(context) else {
            return ErrorMode::Irrelevant;
        };
        if self.is_good_for((e, a), reply) {
            return ErrorMode::None;
        }
        let words: Vec<&str> = reply.split_whitespace().collect();
        if words
            .iter()
            .any(|w| self.entity_index.get(*w).is_some_and(|&o| o != e))
        {
            return ErrorMode::TopicChange;
        }
        if words.iter().any(|w| self.value_attr.get(*w) == Some(&a)) {
            return ErrorMode::WrongValue;
        }
        ErrorMode::Irrelevant
    }

    pub fn correct_reply(&self, question: (usize, usize)) -> String {
        self.world.answer(question.0, question.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_is_deterministic_and_total() {
        let a = generate_world(7, 2, 2).unwrap();
        assert_eq!(a, generate_world(7, 2, 2).unwrap());
        assert_eq!(a.n_facts(), 4);
        let big = generate_world(7, 50, 4).unwrap();
        assert_eq!(big.n_facts(), 200);
        let other = generate_world(8, 50, 4).unwrap();
        assert_ne!(big.facts, other.facts);
    }

    #[test]
    fn small_worlds_are_rejected() {
        assert!(generate_world(1, 1, 3).is_err());
        assert!(generate_world(1, 3, 0).is_err());
    }

    #[test]
    fn value_vocabularies_are_disjoint() {
        let w = generate_world(3, 10, 12).unwrap();
        let all: Vec<&String> = w.values.iter().flatten().collect();
        let uniq: HashSet<&String> = all.iter().copied().collect();
        assert_eq!(all.len(), uniq.len());
        assert_eq!(w.attributes[11], "attr11");
    }

    #[test]
    fn fill_replaces_whole_placeholders_only() {
        assert_eq!(
            fill("the {attr} of {ent} is {val} .", &[("attr", "color"), ("ent", "bazu"), ("val", "red")]),
            "the color of bazu is red ."
        );
        assert_eq!(fill("{ent2} {ent}", &[("ent", "x")]), "{ent2} x");
    }

    #[test]
    fn oracle_accepts_exactly_the_true_answer() {
        let w = generate_world(5, 4, 3).unwrap();
        let o = Oracle::new(&w);
        let q = fill(&w.templates.question[0], &[("attr", &w.attributes[1]), ("ent", &w.entities[2])]);
        let ctx = vec![Turn::human(q, false)];
        assert!(o.judge(&ctx, &w.answer(2, 1)));
        let wrong = w.values[1].iter().find(|v| *v != w.fact(2, 1)).unwrap();
        let reply = format!("the {} of {} is {} .", w.attributes[1], w.entities[2], wrong);
        assert!(!o.judge(&ctx, &reply));
        assert_eq!(o.diagnose(&ctx, &reply), ErrorMode::WrongValue);
        let off_topic = format!("{} {}", w.answer(2, 1), w.entities[0]);
        assert!(!o.judge(&ctx, &off_topic));
        assert_eq!(o.diagnose(&ctx, &off_topic), ErrorMode::TopicChange);
        assert_eq!(o.diagnose(&ctx, "i like tea ."), ErrorMode::Irrelevant);
        assert!(!o.judge(&[], &w.answer(2, 1)));
    }

    #[test]
    fn feedback_turns_do_not_replace_the_question() {
        let w = generate_world(5, 4, 3).unwrap();
        let o = Oracle::new(&w);
        let q = format!("what is the {} of {} ?", w.attributes[0], w.entities[1]);
        let ctx = vec![
            Turn::human(q, false),
            Turn::bot("i like tea .", super::super::Label::HumanDown, ErrorMode::Irrelevant),
            Turn::human(format!("please tell me the {} of {} .", w.attributes[2], w.entities[3]), true),
        ];
        assert_eq!(o.current_question(&ctx), Some((1, 0)));
    }
}
