use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Conversation, Label};
use crate::CoreError;

/// Keeps human labels (and gold corrections) on exactly `round(rate · N)` uniformly
/// chosen human-labeled bot turns; the rest become unlabeled. Feedback turns are kept.
///
/// The retained set is a prefix of one seeded permutation, so higher rates retain
/// supersets of lower rates under the same seed.
pub fn sparsify(corpus: &[Conversation], rate: f64, seed: u64) -> Result<Vec<Conversation>, CoreError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(CoreError::InvalidParams(format!("sample rate {rate} outside (0, 1]")));
    }
    let mut slots: Vec<(usize, usize)> = Vec::new();
    for (c, conv) in corpus.iter().enumerate() {
        for (t, turn) in conv.turns.iter().enumerate() {
            if turn.is_bot() && turn.label().is_human() {
                slots.push((c, t));
            }
        }
    }
    let keep = (rate * slots.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    slots.shuffle(&mut rng);
    let mut out = corpus.to_vec();
    for &(c, t) in &slots[keep..] {
        let turn = &mut out[c].turns[t];
        turn.label = Some(Label::Unlabeled);
        turn.gold_correction = None;
    }
    Ok(out)
}
