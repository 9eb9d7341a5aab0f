//! Append-only conversation log. Each line is a full snapshot of one
//! conversation; the latest snapshot of an id supersedes earlier ones.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use juicer_core::corpus::{parse_corpus, Conversation};

use crate::ServiceError;

pub struct ConversationLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl ConversationLog {
    /// Opens (creating if needed) the log and replays it. A torn final line left by
    /// an interrupted write is cut off so the file stays a valid corpus.
    pub fn open(path: &Path) -> Result<(Self, Vec<Conversation>), ServiceError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut bytes = fs::read(path).unwrap_or_default();
        if let Some(end) = bytes.iter().rposition(|&b| b == b'\n') {
            if end + 1 != bytes.len() {
                bytes.truncate(end + 1);
                fs::write(path, &bytes)?;
            }
        } else if !bytes.is_empty() {
            bytes.clear();
            fs::write(path, &bytes)?;
        }
        let snapshots = parse_corpus(bytes.as_slice())?;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok((
            ConversationLog {
                path: path.to_path_buf(),
                file: Mutex::new(file),
            },
            latest_snapshots(snapshots),
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one validated snapshot and syncs it to disk.
    pub fn append(&self, conv: &Conversation) -> Result<(), ServiceError> {
        conv.validate()?;
        let mut line = serde_json::to_vec(conv)?;
        line.push(b'\n');
        let mut f = self.file.lock().expect("log writer poisoned");
        f.write_all(&line)?;
        f.sync_data()?;
        Ok(())
    }
}

/// Last snapshot per conversation id, in order of first appearance.
pub fn latest_snapshots(snapshots: Vec<Conversation>) -> Vec<Conversation> {
    let mut order: Vec<String> = Vec::new();
    let mut latest: BTreeMap<String, Conversation> = BTreeMap::new();
    for c in snapshots {
        if !latest.contains_key(&c.conversation_id) {
            order.push(c.conversation_id.clone());
        }
        latest.insert(c.conversation_id.clone(), c);
    }
    order.into_iter().filter_map(|id| latest.remove(&id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use juicer_core::corpus::{ErrorMode, Label, Turn};

    fn conv(id: &str, n: usize) -> Conversation {
        let mut turns = Vec::new();
        for i in 0..n {
            turns.push(Turn::human(format!("q{i}"), false));
            turns.push(Turn::bot(format!("a{i}"), Label::Unlabeled, ErrorMode::None));
        }
        Conversation {
            conversation_id: id.into(),
            topic: "live".into(),
            turns,
        }
    }

    #[test]
    fn replay_keeps_latest_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        {
            let (log, convs) = ConversationLog::open(&path).unwrap();
            assert!(convs.is_empty());
            log.append(&conv("a", 1)).unwrap();
            log.append(&conv("b", 1)).unwrap();
            log.append(&conv("a", 2)).unwrap();
        }
        let (_, convs) = ConversationLog::open(&path).unwrap();
        assert_eq!(convs.len(), 2);
        assert_eq!(convs[0].conversation_id, "a");
        assert_eq!(convs[0].turns.len(), 4);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut good = serde_json::to_string(&conv("a", 1)).unwrap();
        good.push('\n');
        fs::write(&path, format!("{good}{{\"conversation_id\": \"b\", \"tur")).unwrap();
        let (_, convs) = ConversationLog::open(&path).unwrap();
        assert_eq!(convs.len(), 1);
        assert_eq!(fs::read_to_string(&path).unwrap(), good);
    }

    #[test]
    fn invalid_snapshots_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let (log, _) = ConversationLog::open(&dir.path().join("log.jsonl")).unwrap();
        let mut c = conv("a", 1);
        c.turns.pop();
        c.turns.push(Turn::human("again", false));
        assert!(log.append(&c).is_err());
    }
}
