//! Scenario files: TOML documents whose tables mirror [`SimConfig`].

use std::path::Path;

use popper_sim::SimConfig;

use crate::CliError;

/// Parses a scenario from TOML text. Unknown and mistyped keys are reported
/// with their dotted path.
pub fn parse_scenario(text: &str) -> Result<SimConfig, CliError> {
    let value: toml::Value = toml::from_str(text).map_err(|e| CliError::Config {
        key: "<document>".into(),
        message: e.message().to_string(),
    })?;
    let cfg: SimConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config {
            key: if path == "." {
                "<document>".into()
            } else {
                path
            },
            message: e.into_inner().to_string(),
        }
    })?;
    cfg.validate().map_err(|e| CliError::Config {
        key: e.key,
        message: e.message,
    })?;
    Ok(cfg)
}

/// Reads and validates a scenario file. Without a path the built-in
/// defaults are used.
pub fn load_scenario(path: Option<&Path>) -> Result<SimConfig, CliError> {
    match path {
        None => Ok(SimConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io {
                path: p.display().to_string(),
                source: e,
            })?;
            parse_scenario(&text)
        }
    }
}
