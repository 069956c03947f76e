//! Query log files: one URL-encoded query per line, optionally preceded by
//! a timestamp and a tab. Blank lines and lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use percent_encoding::percent_decode_str;

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("cannot split {len} entries into {train} training and {test} test entries")]
    Split { len: usize, train: usize, test: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub timestamp: Option<String>,
    pub query: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryLog {
    pub entries: Vec<LogEntry>,
}

/// How a log is cut into a training prefix and a test suffix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitRule {
    /// First `fraction` of the entries (rounded down) train, the rest test.
    Fraction(f64),
    /// First `train` entries train, the next `test` entries test.
    Counts { train: usize, test: usize },
}

impl Default for SplitRule {
    fn default() -> Self {
        SplitRule::Fraction(0.8)
    }
}

impl QueryLog {
    pub fn from_queries<S: Into<String>>(queries: impl IntoIterator<Item = S>) -> Self {
        Self {
            entries: queries
                .into_iter()
                .map(|q| LogEntry {
                    timestamp: None,
                    query: q.into(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.query.as_str())
    }

    pub fn parse(text: &str) -> Result<Self, LogError> {
        Self::read(text.as_bytes())
    }

    pub fn read(input: impl BufRead) -> Result<Self, LogError> {
        let mut entries = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| LogError::Line {
                line: line_no,
                reason: e.to_string(),
            })?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (timestamp, encoded) = match line.split_once('\t') {
                Some((ts, q)) => (Some(ts.trim().to_string()), q),
                None => (None, line),
            };
            let query = decode(encoded.trim()).map_err(|reason| LogError::Line { line: line_no, reason })?;
            if query.trim().is_empty() {
                return Err(LogError::Line {
                    line: line_no,
                    reason: "empty query".into(),
                });
            }
            entries.push(LogEntry { timestamp, query });
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| LogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read(BufReader::new(file))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            if let Some(ts) = &e.timestamp {
                let _ = write!(out, "{ts}\t");
            }
            out.push_str(&encode(&e.query));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LogError> {
        let path = path.as_ref();
        let io = |source| LogError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(self.to_text().as_bytes()).map_err(io)
    }

    /// Order-preserving split into (train, test).
    pub fn split(&self, rule: SplitRule) -> Result<(QueryLog, QueryLog), LogError> {
        let len = self.entries.len();
        let (train, test) = match rule {
            SplitRule::Fraction(f) if (0.0..=1.0).contains(&f) => {
                let train = (len as f64 * f).floor() as usize;
                (train, len - train)
            }
            SplitRule::Fraction(_) => return Err(LogError::Split { len, train: 0, test: 0 }),
            SplitRule::Counts { train, test } => (train, test),
        };
        if train + test > len {
            return Err(LogError::Split { len, train, test });
        }
        Ok((
            QueryLog {
                entries: self.entries[..train].to_vec(),
            },
            QueryLog {
                entries: self.entries[train..train + test].to_vec(),
            },
        ))
    }
}

/// `application/x-www-form-urlencoded` value encoding.
pub fn encode(query: &str) -> String {
    form_urlencoded::byte_serialize(query.as_bytes()).collect()
}

pub fn decode(encoded: &str) -> Result<String, String> {
    let spaced = encoded.replace('+', " ");
    percent_decode_str(&spaced)
        .decode_utf8()
        .map(|s| s.into_owned())
        .map_err(|e| format!("query is not UTF-8 after decoding: {e}"))
}
