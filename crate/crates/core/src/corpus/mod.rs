//! Feedback-dialogue corpus: schema, synthetic world and generator, sparsification,
//! JSONL persistence and summary statistics.

mod generate;
mod io;
mod sparsify;
mod split;
mod stats;
mod world;

pub use generate::{generate_corpus, generate_corpus_logged, CorpusParams, GenerationLog};
pub use io::{load_corpus, parse_corpus, save_corpus, write_corpus};
pub use sparsify::sparsify;
pub use split::{split_corpus, CorpusSplits, SplitConfig};
pub use stats::{corpus_stats, CorpusStats};
pub use world::{generate_world, Oracle, Templates, WorldSpec};

use serde::{Deserialize, Serialize};

use crate::CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Human,
    Bot,
}

/// Binary feedback on a bot turn together with its provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    HumanUp,
    HumanDown,
    Unlabeled,
    PredGood,
    PredBad,
}

impl Label {
    pub const ALL: [Label; 5] = [
        Label::HumanUp,
        Label::HumanDown,
        Label::Unlabeled,
        Label::PredGood,
        Label::PredBad,
    ];

    /// `Some(true)` for good, `Some(false)` for bad, `None` when unlabeled.
    pub fn is_good(self) -> Option<bool> {
        match self {
            Label::HumanUp | Label::PredGood => Some(true),
            Label::HumanDown | Label::PredBad => Some(false),
            Label::Unlabeled => None,
        }
    }

    pub fn is_human(self) -> bool {
        matches!(self, Label::HumanUp | Label::HumanDown)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::HumanUp => "human_up",
            Label::HumanDown => "human_down",
            Label::Unlabeled => "unlabeled",
            Label::PredGood => "pred_good",
            Label::PredBad => "pred_bad",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    WrongValue,
    TopicChange,
    Irrelevant,
    None,
}

impl ErrorMode {
    pub const BAD: [ErrorMode; 3] = [ErrorMode::WrongValue, ErrorMode::TopicChange, ErrorMode::Irrelevant];

    pub fn is_bad(self) -> bool {
        self != ErrorMode::None
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorMode::WrongValue => "wrong_value",
            ErrorMode::TopicChange => "topic_change",
            ErrorMode::Irrelevant => "irrelevant",
            ErrorMode::None => "none",
        }
    }
}

/// One utterance. Bot-only fields are `None` on human turns and vice versa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    pub label: Option<Label>,
    pub error_mode: Option<ErrorMode>,
    pub gold_correction: Option<String>,
    pub is_feedback_text: Option<bool>,
}

impl Turn {
    pub fn human(text: impl Into<String>, is_feedback: bool) -> Self {
        Turn {
            speaker: Speaker::Human,
            text: text.into(),
            label: None,
            error_mode: None,
            gold_correction: None,
            is_feedback_text: Some(is_feedback),
        }
    }

    pub fn bot(text: impl Into<String>, label: Label, error_mode: ErrorMode) -> Self {
        Turn {
            speaker: Speaker::Bot,
            text: text.into(),
            label: Some(label),
            error_mode: Some(error_mode),
            gold_correction: None,
            is_feedback_text: None,
        }
    }

    pub fn is_bot(&self) -> bool {
        self.speaker == Speaker::Bot
    }

    pub fn is_feedback(&self) -> bool {
        self.is_feedback_text == Some(true)
    }

    pub fn label(&self) -> Label {
        self.label.unwrap_or(Label::Unlabeled)
    }

    pub fn error_mode(&self) -> ErrorMode {
        self.error_mode.unwrap_or(ErrorMode::None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    pub topic: String,
    pub turns: Vec<Turn>,
}

impl Conversation {
    /// Indices of bot turns.
    pub fn bot_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_bot())
            .map(|(i, _)| i)
    }

    /// The free-form feedback turn right after bot turn `i`, if any.
    pub fn feedback_after(&self, i: usize) -> Option<&Turn> {
        self.turns.get(i + 1).filter(|t| t.is_feedback())
    }

    /// Checks the structural invariants of the schema.
    pub fn validate(&self) -> Result<(), CoreError> {
        let bad = |msg: String| {
            Err(CoreError::InvalidConversation {
                id: self.conversation_id.clone(),
                msg,
            })
        };
        if self.turns.is_empty() {
            return bad("conversation has no turns".into());
        }
        for (i, t) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Speaker::Human } else { Speaker::Bot };
            if t.speaker != expected {
                return bad(format!("turn {i}: speakers must alternate starting with human"));
            }
            match t.speaker {
                Speaker::Bot => {
                    if t.label.is_none() || t.error_mode.is_none() || t.is_feedback_text.is_some() {
                        return bad(format!("turn {i}: bot turns carry label and error_mode only"));
                    }
                    if t.gold_correction.is_some() && t.label != Some(Label::HumanDown) {
                        return bad(format!("turn {i}: gold_correction requires a human_down label"));
                    }
                    if t.error_mode().is_bad() && !self.turns.get(i + 1).is_some_and(Turn::is_feedback) {
                        return bad(format!("turn {i}: bad reply must be followed by feedback text"));
                    }
                }
                Speaker::Human => {
                    if t.label.is_some()
                        || t.error_mode.is_some()
                        || t.gold_correction.is_some()
                        || t.is_feedback_text.is_none()
                    {
                        return bad(format!("turn {i}: human turns carry only is_feedback_text"));
                    }
                    if t.is_feedback() {
                        let prev_bad = i > 0 && self.turns[i - 1].error_mode().is_bad();
                        if !prev_bad {
                            return bad(format!("turn {i}: feedback text must follow a bad bot reply"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Validates every conversation.
pub fn validate_corpus(corpus: &[Conversation]) -> Result<(), CoreError> {
    corpus.iter().try_for_each(Conversation::validate)
}

/// True when every bad bot reply is immediately followed by a feedback turn.
pub fn dense_feedback_holds(corpus: &[Conversation]) -> bool {
    corpus.iter().all(|c| {
        c.turns.iter().enumerate().all(|(i, t)| {
            !(t.is_bot() && t.error_mode().is_bad()) || c.turns.get(i + 1).is_some_and(Turn::is_feedback)
        })
    })
}
