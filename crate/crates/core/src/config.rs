//! Flat `key = value` configuration text.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; a repeated key keeps its last value.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::ConfigInvalid(format!("line {}: expected 'key = value'", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::ConfigInvalid(format!("line {}: empty key", n + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn load_kv(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    parse_kv(&std::fs::read_to_string(path)?)
}

/// Parses a value, naming the key on failure.
pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::ConfigInvalid(format!("{key}: cannot parse '{value}'")))
}
