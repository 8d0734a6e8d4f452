//! Key-value config file for `serve` and `replay`. Command-line flags take
//! precedence over file values.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub host: Option<String>,
    pub port: Option<u16>,
    pub model: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub threshold: Option<f64>,
    pub debounce: Option<usize>,
    pub alpha: Option<f64>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }
}

/// `flag` if given, else the file value, else `default`.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Like [`pick`] for settings without a default.
pub fn require<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T, CliError> {
    flag.or(file)
        .ok_or_else(|| CliError::Usage(format!("--{name} is required (flag or config file)")))
}
