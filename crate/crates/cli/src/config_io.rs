//! TOML experiment configs with `--key=value` overrides.

use std::fs;
use std::path::Path;

use fedoui_core::config::ExperimentConfig;
use serde::Deserialize;
use toml::{Table, Value};

use crate::error::CliError;
use crate::manifest::RunManifest;

fn known_keys() -> Vec<String> {
    match Value::try_from(ExperimentConfig::default()) {
        Ok(Value::Table(t)) => t.keys().cloned().collect(),
        _ => unreachable!("config serializes to a table"),
    }
}

/// Parses `--key=value` (or `key=value`) into a TOML entry. Values that are
/// not valid TOML literals are taken as strings.
pub fn parse_override(arg: &str) -> Result<(String, Value), CliError> {
    let body = arg.strip_prefix("--").unwrap_or(arg);
    let (key, raw) = body
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{arg}` is not of the form --key=value")))?;
    let key = key.trim().replace('-', "_");
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key, value))
}

/// Builds a config from a table, reporting the offending key on failure.
pub fn config_from_table(table: Table) -> Result<ExperimentConfig, CliError> {
    let known = known_keys();
    if let Some(key) = table.keys().find(|k| !known.contains(k)) {
        return Err(CliError::Config(format!("{key}: unknown configuration key")));
    }
    for (key, value) in &table {
        let mut single = Table::new();
        single.insert(key.clone(), value.clone());
        if let Err(e) = ExperimentConfig::deserialize(Value::Table(single)) {
            return Err(CliError::Config(format!("{key}: {}", e.message())));
        }
    }
    let config = ExperimentConfig::deserialize(Value::Table(table))
        .map_err(|e| CliError::Config(e.message().to_string()))?;
    config
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}

pub fn config_to_toml(config: &ExperimentConfig) -> String {
    toml::to_string(config).expect("config serializes")
}

/// Reads a TOML config, or the resolved config inside a `manifest.json`,
/// then applies overrides in order.
pub fn load_config(path: &Path, overrides: &[(String, Value)]) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut table = if path.extension().is_some_and(|e| e == "json") {
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: not a run manifest: {e}", path.display())))?;
        match Value::try_from(manifest.config) {
            Ok(Value::Table(t)) => t,
            _ => unreachable!("config serializes to a table"),
        }
    } else {
        text.parse::<Table>()
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?
    };
    for (k, v) in overrides {
        table.insert(k.clone(), v.clone());
    }
    config_from_table(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedoui_core::config::Method;

    #[test]
    fn overrides_parse_typed_values() {
        assert_eq!(parse_override("--rounds=5").unwrap(), ("rounds".into(), Value::Integer(5)));
        assert_eq!(parse_override("--lr=0.5").unwrap(), ("lr".into(), Value::Float(0.5)));
        assert_eq!(
            parse_override("--method=fedprox").unwrap(),
            ("method".into(), Value::String("fedprox".into()))
        );
        assert_eq!(
            parse_override("--method=\"grad-align\"").unwrap().1,
            Value::String("grad-align".into())
        );
        assert!(parse_override("--rounds").is_err());
    }

    #[test]
    fn unknown_key_is_named() {
        let mut t = Table::new();
        t.insert("roundz".into(), Value::Integer(3));
        let err = config_from_table(t).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("roundz"));
    }

    #[test]
    fn unknown_method_names_field() {
        let mut t = Table::new();
        t.insert("rounds".into(), Value::Integer(3));
        t.insert("method".into(), Value::String("fedmax".into()));
        let err = config_from_table(t).unwrap_err();
        assert!(err.to_string().starts_with("method"), "{err}");
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = ExperimentConfig {
            method: Method::GradAlign,
            concentration: 0.37,
            seed: 99,
            ..Default::default()
        };
        let text = config_to_toml(&c);
        let back = config_from_table(text.parse::<Table>().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(config_to_toml(&back), text);
    }
}
