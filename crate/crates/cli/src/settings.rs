use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use khdm::io::{parse_config, section};

use crate::error::{CliError, CliResult};

/// Config file entries; command-line flags take precedence.
#[derive(Debug, Default)]
pub struct Settings {
    pub map: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(p) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
        let map = parse_config(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
        Ok(Self { map })
    }

    pub fn section(&self, prefix: &str) -> BTreeMap<String, String> {
        section(&self.map, prefix)
    }

    pub fn get<T: FromStr>(&self, key: &str, flag: Option<T>) -> CliResult<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config key {key} has invalid value {v:?}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> CliResult<T> {
        Ok(self.get(key, flag)?.unwrap_or(default))
    }
}
