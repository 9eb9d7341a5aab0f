//! JSONL persistence, one conversation per line.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Conversation;
use crate::CoreError;

pub fn write_corpus<W: Write>(corpus: &[Conversation], mut out: W) -> Result<(), CoreError> {
    for conv in corpus {
        serde_json::to_writer(&mut out, conv).map_err(|e| CoreError::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `corpus` atomically (temporary sibling file, then rename).
pub fn save_corpus(corpus: &[Conversation], path: &Path) -> Result<(), CoreError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let file = fs::File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        write_corpus(corpus, &mut w)?;
        w.into_inner().map_err(|e| CoreError::Io(e.into_error()))?.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Parses one JSONL line, reporting the offending field path on failure.
pub fn parse_line(line: &str, line_no: usize) -> Result<Conversation, CoreError> {
    let mut de = serde_json::Deserializer::from_str(line);
    let conv: Conversation = serde_path_to_error::deserialize(&mut de).map_err(|e| CoreError::Schema {
        line: line_no,
        field: e.path().to_string(),
        msg: e.inner().to_string(),
    })?;
    de.end().map_err(|e| CoreError::Schema {
        line: line_no,
        field: ".".into(),
        msg: e.to_string(),
    })?;
    conv.validate().map_err(|e| CoreError::Schema {
        line: line_no,
        field: "turns".into(),
        msg: e.to_string(),
    })?;
    Ok(conv)
}

/// Reads a corpus; blank lines are ignored and line numbers start at 1.
pub fn parse_corpus<R: Read>(input: R) -> Result<Vec<Conversation>, CoreError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Conversation>, CoreError> {
    parse_corpus(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, generate_world, CorpusParams};

    #[test]
    fn empty_corpus_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        save_corpus(&[], &p).unwrap();
        assert_eq!(fs::read(&p).unwrap().len(), 0);
        assert!(load_corpus(&p).unwrap().is_empty());
    }

    #[test]
    fn generated_corpus_round_trips() {
        let w = generate_world(1, 10, 3).unwrap();
        let c = generate_corpus(&w, 2, &CorpusParams::new(100, 4, 0.4, 0.5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/c.jsonl");
        save_corpus(&c, &p).unwrap();
        assert_eq!(load_corpus(&p).unwrap(), c);
    }

    #[test]
    fn fields_are_written_in_schema_order() {
        let w = generate_world(1, 3, 2).unwrap();
        let c = generate_corpus(&w, 2, &CorpusParams::new(1, 2, 0.0, 0.0)).unwrap();
        let mut buf = Vec::new();
        write_corpus(&c, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let order = ["\"conversation_id\"", "\"topic\"", "\"turns\"", "\"speaker\"", "\"text\"", "\"label\"", "\"error_mode\"", "\"gold_correction\"", "\"is_feedback_text\""];
        let pos: Vec<usize> = order.iter().map(|k| s.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert!(s.contains("\"label\":null"));
    }

    #[test]
    fn invalid_label_reports_line_and_field() {
        let good = r#"{"conversation_id":"a","topic":"t","turns":[{"speaker":"human","text":"hi","label":null,"error_mode":null,"gold_correction":null,"is_feedback_text":false}]}"#;
        let bad = r#"{"conversation_id":"b","topic":"t","turns":[{"speaker":"human","text":"hi","label":null,"error_mode":null,"gold_correction":null,"is_feedback_text":false},{"speaker":"bot","text":"yo","label":"up","error_mode":"none","gold_correction":null,"is_feedback_text":null}]}"#;
        let input = format!("{good}\n{bad}\n");
        match parse_corpus(input.as_bytes()) {
            Err(CoreError::Schema { line, field, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "turns[1].label");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn structural_violations_are_schema_errors() {
        let two_humans = r#"{"conversation_id":"b","topic":"t","turns":[{"speaker":"human","text":"hi","label":null,"error_mode":null,"gold_correction":null,"is_feedback_text":false},{"speaker":"human","text":"yo","label":null,"error_mode":null,"gold_correction":null,"is_feedback_text":false}]}"#;
        assert!(matches!(parse_corpus(two_humans.as_bytes()), Err(CoreError::Schema { line: 1, .. })));
    }
}
