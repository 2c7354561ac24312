//! Flat `key = value` run configuration with command-line overrides.
//!
//! A config file is a TOML document without tables; its keys are the field
//! names of [`TrainConfig`]. Overrides use the same keys, `key=value`, and the
//! value is read as a TOML value when it parses as one and as a bare string
//! otherwise, so `backup=hardmax` and `lambda=1.0` both work.

use toml::{Table, Value};
use treeqn_training::TrainConfig;

use crate::CliError;

/// Keys without a default.
pub const REQUIRED_KEYS: [&str; 3] = ["arch", "seed", "transitions"];

pub fn parse_file(text: &str) -> Result<Table, CliError> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(format!("config file: {}", e.message())))?;
    if let Some((key, _)) = table.iter().find(|(_, v)| v.is_table() || v.is_array()) {
        return Err(CliError::Config(format!(
            "config key `{key}` must be a plain value"
        )));
    }
    Ok(table)
}

/// Split `key=value`.
pub fn parse_override(s: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{s}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Config(format!("override `{s}` has an empty key")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .filter(|v| !v.is_table() && !v.is_array())
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Apply overrides to the file table and deserialize.
pub fn resolve(mut table: Table, overrides: &[(String, Value)]) -> Result<TrainConfig, CliError> {
    for (k, v) in overrides {
        table.insert(k.clone(), v.clone());
    }
    if let Some(key) = REQUIRED_KEYS.iter().find(|k| !table.contains_key(**k)) {
        return Err(CliError::MissingKey(key.to_string()));
    }
    let cfg: TrainConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

/// Every key of `cfg`, as a config file that resolves back to it.
pub fn to_file(cfg: &TrainConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}
