use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed log at line {line}: {reason}")]
    MalformedLog { line: usize, reason: String },
}

fn malformed(line: usize, reason: impl Into<String>) -> AttackError {
    AttackError::MalformedLog {
        line,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferPayload {
    pub from: String,
    pub to: String,
    pub quantity: Decimal,
    pub symbol: String,
    pub issuer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionRecord {
    pub code_account: String,
    pub action_name: String,
    /// Notification receiver; equals `code_account` for the action itself.
    pub receiver: String,
    #[serde(default)]
    pub authorizers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer_payload: Option<TransferPayload>,
}

impl ActionRecord {
    pub fn is_direct(&self) -> bool {
        self.receiver == self.code_account
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransactionRecord {
    pub tx_id: String,
    /// UTC seconds.
    pub block_time: i64,
    pub actions: Vec<ActionRecord>,
}

impl TransactionRecord {
    fn validate(&self, line: usize) -> Result<(), AttackError> {
        if self.actions.is_empty() {
            return Err(malformed(
                line,
                format!("transaction {} has no actions", self.tx_id),
            ));
        }
        for a in &self.actions {
            match (&a.transfer_payload, a.action_name == "transfer") {
                (Some(p), true) if p.quantity.is_sign_negative() && !p.quantity.is_zero() => {
                    return Err(malformed(line, "negative transfer quantity"));
                }
                (Some(_), true) | (None, false) => {}
                (None, true) => return Err(malformed(line, "transfer without payload")),
                (Some(_), false) => {
                    return Err(malformed(
                        line,
                        format!("payload on non-transfer action {}", a.action_name),
                    ))
                }
            }
        }
        Ok(())
    }
}

/// Streams validated records from line-delimited JSON.
pub struct LogReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
    last_time: i64,
}

impl<R: BufRead> LogReader<R> {
    pub fn new(reader: R) -> Self {
        LogReader {
            lines: reader.lines(),
            line: 0,
            last_time: i64::MIN,
        }
    }
}

impl LogReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, AttackError> {
        let f = File::open(path).map_err(|source| AttackError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(LogReader::new(BufReader::new(f)))
    }
}

impl<R: BufRead> Iterator for LogReader<R> {
    type Item = Result<TransactionRecord, AttackError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(malformed(self.line + 1, e.to_string()))),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            let rec: TransactionRecord = match serde_json::from_str(&text) {
                Ok(r) => r,
                Err(e) => return Some(Err(malformed(self.line, e.to_string()))),
            };
            if let Err(e) = rec.validate(self.line) {
                return Some(Err(e));
            }
            if rec.block_time < self.last_time {
                return Some(Err(malformed(self.line, "block_time decreases")));
            }
            self.last_time = rec.block_time;
            return Some(Ok(rec));
        }
    }
}

/// Parses a whole log held in memory.
pub fn parse_log(text: &str) -> Result<Vec<TransactionRecord>, AttackError> {
    LogReader::new(text.as_bytes()).collect()
}
