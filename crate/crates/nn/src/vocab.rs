use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::NnError;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

/// Whitespace-token vocabulary. The four specials always occupy ids 0..4.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from the given words, deduplicated in first-seen order.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for special in [PAD, BOS, EOS, UNK] {
            vocab.push(special);
        }
        for w in words {
            vocab.push(w.as_ref());
        }
        vocab
    }

    fn push(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Maps whitespace tokens to ids; unknown words become `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace()
            .map(|w| self.id(w).unwrap_or(UNK_ID))
            .collect()
    }

    /// Like [`Vocab::encode`] but fails on the first unknown word.
    pub fn encode_strict(&self, text: &str) -> Result<Vec<usize>, NnError> {
        text.split_whitespace()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| NnError::UnknownToken(w.to_string()))
            })
            .collect()
    }

    /// Renders ids back to text, stopping at `<eos>` and dropping `<bos>`/`<pad>`.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out: Vec<&str> = Vec::with_capacity(ids.len());
        for &id in ids {
            match id {
                EOS_ID => break,
                BOS_ID | PAD_ID => continue,
                _ => out.push(self.token(id).unwrap_or(UNK)),
            }
        }
        out.join(" ")
    }
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_come_first() {
        let v = Vocab::new(["hello", "world", "hello"]);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id(PAD), Some(PAD_ID));
        assert_eq!(v.id(EOS), Some(EOS_ID));
        assert_eq!(v.id("world"), Some(5));
    }

    #[test]
    fn encode_decode() {
        let v = Vocab::new(["a", "b"]);
        let ids = v.encode("a b zzz");
        assert_eq!(ids, vec![4, 5, UNK_ID]);
        assert!(v.encode_strict("a zzz").is_err());
        assert_eq!(v.decode(&[BOS_ID, 4, 5, EOS_ID, 4]), "a b");
    }
}
