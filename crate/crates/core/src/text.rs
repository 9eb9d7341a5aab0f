//! Whitespace tokenization and segment packing for model inputs.

use juicer_nn::Vocab;

use crate::corpus::{Conversation, WorldSpec};

/// Separator between input segments (turns, replies, feedback).
pub const SEP: &str = "|";
pub const TASK_CORRECT: &str = "__correct__";
pub const TASK_FEEDBACK: &str = "__feedback__";
pub const TASK_DIALOGUE: &str = "__dialogue__";

/// Vocabulary of everything the world's templates can produce plus the
/// separator and task tokens.
pub fn build_vocab(world: &WorldSpec) -> Vocab {
    let mut words: Vec<String> = world.tokens().into_iter().collect();
    words.extend([SEP, TASK_CORRECT, TASK_FEEDBACK, TASK_DIALOGUE].map(String::from));
    Vocab::new(words)
}

/// Texts of the turns before index `i`.
pub fn context_texts(conv: &Conversation, i: usize) -> Vec<&str> {
    conv.turns[..i].iter().map(|t| t.text.as_str()).collect()
}

/// Packs `head ⊕ context ⊕ tail` into at most `max_len` ids with [`SEP`] between
/// segments. Head and tail segments are kept whole when possible; the context is
/// left-truncated, dropping the oldest turns first and cutting tokens off the
/// front of the oldest kept turn only when even the latest turn does not fit.
pub fn pack(vocab: &Vocab, head: &[&str], context: &[&str], tail: &[&str], max_len: usize) -> Vec<usize> {
    let sep = vocab.id(SEP).expect("vocabulary has separator");
    let enc = |s: &str| vocab.encode(s);
    let head_ids: Vec<Vec<usize>> = head.iter().map(|s| enc(s)).collect();
    let mut tail_ids: Vec<Vec<usize>> = tail.iter().map(|s| enc(s)).collect();

    let fixed = |segs: &[Vec<usize>]| segs.iter().map(|s| s.len() + 1).sum::<usize>();
    // trim tail segments from the right if head+tail alone overflow
    while fixed(&head_ids) + fixed(&tail_ids) > max_len + 1 {
        let longest = (0..tail_ids.len()).max_by_key(|&i| tail_ids[i].len());
        match longest {
            Some(i) if tail_ids[i].len() > 1 => {
                tail_ids[i].pop();
            }
            _ => break,
        }
    }
    let used = fixed(&head_ids) + fixed(&tail_ids);
    let mut budget = (max_len + 1).saturating_sub(used);

    let mut ctx: Vec<Vec<usize>> = Vec::new();
    for turn in context.iter().rev() {
        let ids = enc(turn);
        if ids.len() < budget {
            budget -= ids.len() + 1;
            ctx.push(ids);
        } else {
            if ctx.is_empty() && budget > 1 {
                ctx.push(ids[ids.len() - (budget - 1)..].to_vec());
            }
            break;
        }
    }
    ctx.reverse();

    let mut out = Vec::with_capacity(max_len);
    for seg in head_ids.iter().chain(&ctx).chain(&tail_ids) {
        if !out.is_empty() {
            out.push(sep);
        }
        out.extend_from_slice(seg);
    }
    out.truncate(max_len);
    out
}

/// Target ids, truncated to leave room for `<eos>`.
pub fn target(vocab: &Vocab, text: &str, max_len: usize) -> Vec<usize> {
    let mut ids = vocab.encode(text);
    ids.truncate(max_len.saturating_sub(1));
    ids
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::new("a b c d e f g h".split(' ').chain([SEP, TASK_CORRECT]))
    }

    fn words(v: &Vocab, ids: &[usize]) -> String {
        ids.iter().map(|&i| v.token(i).unwrap()).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn everything_fits() {
        let v = vocab();
        let ids = pack(&v, &[TASK_CORRECT], &["a b", "c"], &["d e"], 20);
        assert_eq!(words(&v, &ids), "__correct__ | a b | c | d e");
    }

    #[test]
    fn oldest_turns_are_dropped_first() {
        let v = vocab();
        let ids = pack(&v, &[], &["a b", "c d", "e"], &["f"], 7);
        assert_eq!(words(&v, &ids), "c d | e | f");
        let ids = pack(&v, &[], &["a b c d e"], &["f"], 5);
        assert_eq!(words(&v, &ids), "c d e | f");
    }

    #[test]
    fn packed_length_never_exceeds_budget() {
        let v = vocab();
        for max in 1..15 {
            let ids = pack(&v, &[TASK_CORRECT], &["a b c", "d e f g", "h"], &["a b c d", "e f"], max);
            assert!(ids.len() <= max, "{max}: {}", ids.len());
        }
    }
}
