use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Conversation, ErrorMode, Label};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub conversations: usize,
    pub bot_turns: usize,
    pub human_turns: usize,
    /// Bot-turn counts per label state (all five states always present).
    pub labels: BTreeMap<String, usize>,
    pub error_modes: BTreeMap<String, usize>,
    pub feedback_turns: usize,
    /// Feedback turns per bot turn.
    pub feedback_density: f64,
    pub gold_corrections: usize,
}

pub fn corpus_stats(corpus: &[Conversation]) -> CorpusStats {
    let mut labels: BTreeMap<String, usize> = Label::ALL.iter().map(|l| (l.as_str().to_string(), 0)).collect();
    let mut error_modes: BTreeMap<String, usize> = ErrorMode::BAD
        .iter()
        .chain([&ErrorMode::None])
        .map(|m| (m.as_str().to_string(), 0))
        .collect();
    let (mut bot, mut human, mut feedback, mut gold) = (0, 0, 0, 0);
    for t in corpus.iter().flat_map(|c| &c.turns) {
        if t.is_bot() {
            bot += 1;
            *labels.get_mut(t.label().as_str()).expect("all labels present") += 1;
            *error_modes.get_mut(t.error_mode().as_str()).expect("all modes present") += 1;
            gold += t.gold_correction.is_some() as usize;
        } else {
            human += 1;
            feedback += t.is_feedback() as usize;
        }
    }
    CorpusStats {
        conversations: corpus.len(),
        bot_turns: bot,
        human_turns: human,
        labels,
        error_modes,
        feedback_turns: feedback,
        feedback_density: if bot == 0 { 0.0 } else { feedback as f64 / bot as f64 },
        gold_corrections: gold,
    }
}

impl CorpusStats {
    pub fn label_count(&self, label: Label) -> usize {
        self.labels[label.as_str()]
    }
}
