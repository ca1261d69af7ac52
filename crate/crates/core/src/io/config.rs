use std::collections::BTreeMap;

use super::{IoError, Result};

/// Parses `key = value` lines. `#` starts a comment; blank lines are
/// skipped; a repeated key is an error.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| IoError::Format(format!("line {}: expected key = value", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(IoError::Format(format!("line {}: empty key", i + 1)));
        }
        if map.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(IoError::Format(format!("line {}: duplicate key {k}", i + 1)));
        }
    }
    Ok(map)
}

/// Entries under `prefix.` with the prefix removed.
pub fn section(map: &BTreeMap<String, String>, prefix: &str) -> BTreeMap<String, String> {
    let p = format!("{prefix}.");
    map.iter()
        .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
        .collect()
}
