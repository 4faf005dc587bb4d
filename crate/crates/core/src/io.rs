//! Shared pieces of the text file formats.

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("unsupported format or version: {0}")]
    Version(String),
    #[error("missing {0}")]
    Missing(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
}

/// Splits `k=v k=v ...` into a map. Values may not contain spaces.
pub fn parse_key_values(s: &str) -> Result<BTreeMap<String, String>, FormatError> {
    s.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| FormatError::Parse(format!("expected key=value, got '{kv}'")))
        })
        .collect()
}

pub fn require<T: FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T, FormatError> {
    let v = kv.get(key).ok_or_else(|| FormatError::Missing(key.to_string()))?;
    v.parse()
        .map_err(|_| FormatError::Parse(format!("bad value for {key}: '{v}'")))
}

/// Parses one whitespace-separated field at `line`.
pub(crate) fn field<T: FromStr>(
    parts: &mut std::str::SplitWhitespace<'_>,
    line: usize,
    what: &str,
) -> Result<T, FormatError> {
    let tok = parts.next().ok_or_else(|| FormatError::Line {
        line,
        msg: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| FormatError::Line {
        line,
        msg: format!("bad {what} '{tok}'"),
    })
}
