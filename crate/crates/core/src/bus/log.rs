//! Reading recorded bus logs.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::msg::{Payload, STANDARD_TOPICS};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub line: usize,
    pub topic: String,
    pub publisher: String,
    pub seq: u64,
    pub stamp: f64,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogEntry {
    Record(LogRecord),
    /// The final line was cut off mid-write.
    Truncated { line: usize },
}

#[derive(Deserialize)]
struct RawLine {
    topic: String,
    publisher: String,
    seq: u64,
    stamp: f64,
    payload: serde_json::Value,
}

pub struct LogReader<R> {
    reader: R,
    line: usize,
    done: bool,
}

impl<R: BufRead> LogReader<R> {
    pub fn new(reader: R) -> Self {
        LogReader { reader, line: 0, done: false }
    }

    fn parse(&self, text: &str) -> Result<LogRecord, String> {
        let raw: RawLine = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let kind = STANDARD_TOPICS
            .iter()
            .find(|t| t.0 == raw.topic)
            .map(|t| t.1)
            .ok_or_else(|| format!("unknown topic {:?}", raw.topic))?;
        let payload = Payload::from_value(kind, raw.payload).map_err(|e| format!("{}: {e}", raw.topic))?;
        Ok(LogRecord {
            line: self.line,
            topic: raw.topic,
            publisher: raw.publisher,
            seq: raw.seq,
            stamp: raw.stamp,
            payload,
        })
    }
}

impl<R: BufRead> Iterator for LogReader<R> {
    type Item = Result<LogEntry, LogError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut buf = String::new();
        loop {
            buf.clear();
            self.line += 1;
            match self.reader.read_line(&mut buf) {
                Ok(0) => {
                    self.done = true;
                    return None;
                }
                Ok(_) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(LogError::Corrupt {
                        line: self.line,
                        message: e.to_string(),
                    }));
                }
            }
            if !buf.trim().is_empty() {
                break;
            }
        }
        let complete = buf.ends_with('\n');
        match self.parse(buf.trim_end()) {
            Ok(r) => Some(Ok(LogEntry::Record(r))),
            Err(_) if !complete => {
                self.done = true;
                Some(Ok(LogEntry::Truncated { line: self.line }))
            }
            Err(message) => {
                self.done = true;
                Some(Err(LogError::Corrupt { line: self.line, message }))
            }
        }
    }
}

pub fn read_log(path: &Path) -> Result<LogReader<BufReader<File>>, LogError> {
    let f = File::open(path).map_err(|source| LogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(LogReader::new(BufReader::new(f)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"topic":"odom/truth","publisher":"sim","seq":1,"stamp":0.1,"payload":{"x":1.0,"y":0.0,"yaw":0.0}}"#;

    fn entries(text: &str) -> Vec<Result<LogEntry, LogError>> {
        LogReader::new(text.as_bytes()).collect()
    }

    #[test]
    fn reads_records() {
        let text = format!("{GOOD}\n{GOOD}\n");
        let e = entries(&text);
        assert_eq!(e.len(), 2);
        match &e[1] {
            Ok(LogEntry::Record(r)) => {
                assert_eq!((r.line, r.topic.as_str(), r.seq), (2, "odom/truth", 1));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_tail_is_reported() {
        let text = format!("{GOOD}\n{}", &GOOD[..40]);
        let e = entries(&text);
        assert!(matches!(e[1], Ok(LogEntry::Truncated { line: 2 })));
    }

    #[test]
    fn corrupt_line_reports_position() {
        let text = format!("{GOOD}\nnot json\n{GOOD}\n");
        let e = entries(&text);
        assert_eq!(e.len(), 2);
        match &e[1] {
            Err(LogError::Corrupt { line, .. }) => assert_eq!(*line, 2),
            other => panic!("{other:?}"),
        }
        let wrong = GOOD.replace("odom/truth", "odom/nope");
        assert!(matches!(entries(&format!("{wrong}\n"))[0], Err(LogError::Corrupt { line: 1, .. })));
    }
}
