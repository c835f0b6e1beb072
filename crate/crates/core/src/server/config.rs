//! Server configuration: a `key = value` text file.
//!
//! ```text
//! root_zone = handleroot.example.org
//! listen = 127.0.0.1:5353
//! data_dir = /var/lib/onhs
//! depth_budget = 16
//! audit_cap = 8
//! ```
//!
//! `#` starts a comment. `ONHS_DATA_DIR` overrides `data_dir`.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::name::Name;
use crate::resolution::DEFAULT_DEPTH_BUDGET;

use super::audit::DEFAULT_AUDIT_CAP;

pub const DATA_DIR_ENV: &str = "ONHS_DATA_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {detail}")]
    Syntax { line: usize, detail: String },
    #[error("missing required key {0}")]
    Missing(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerConfig {
    pub root_zone: Name,
    pub listen: String,
    pub data_dir: PathBuf,
    pub depth_budget: usize,
    pub audit_cap: usize,
}

impl ServerConfig {
    pub fn new(root_zone: Name, data_dir: impl Into<PathBuf>) -> Self {
        ServerConfig {
            root_zone,
            listen: "127.0.0.1:5353".into(),
            data_dir: data_dir.into(),
            depth_budget: DEFAULT_DEPTH_BUDGET,
            audit_cap: DEFAULT_AUDIT_CAP,
        }
    }

    /// Parses config text; `data_dir` from the environment is not applied.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut root_zone = None;
        let mut listen = None;
        let mut data_dir = None;
        let mut depth_budget = DEFAULT_DEPTH_BUDGET;
        let mut audit_cap = DEFAULT_AUDIT_CAP;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                detail: format!("expected key = value, found {content:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let number = |v: &str| {
                v.parse::<usize>().map_err(|_| ConfigError::Syntax {
                    line,
                    detail: format!("{key} must be a non-negative integer"),
                })
            };
            match key {
                "root_zone" => {
                    root_zone = Some(Name::parse(value).map_err(|e| ConfigError::Syntax {
                        line,
                        detail: e.to_string(),
                    })?)
                }
                "listen" => listen = Some(value.to_string()),
                "data_dir" => data_dir = Some(PathBuf::from(value)),
                "depth_budget" => depth_budget = number(value)?.max(1),
                "audit_cap" => audit_cap = number(value)?,
                other => {
                    return Err(ConfigError::Syntax {
                        line,
                        detail: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        let mut config = ServerConfig::new(
            root_zone.ok_or(ConfigError::Missing("root_zone"))?,
            data_dir.ok_or(ConfigError::Missing("data_dir"))?,
        );
        if let Some(l) = listen {
            config.listen = l;
        }
        config.depth_budget = depth_budget;
        config.audit_cap = audit_cap;
        Ok(config)
    }

    /// Reads a config file, then applies `ONHS_DATA_DIR`. A relative
    /// `data_dir` is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let with_dir = |t: &str| -> Result<ServerConfig, ConfigError> {
            ServerConfig::parse(t).or_else(|e| match e {
                ConfigError::Missing("data_dir") if std::env::var_os(DATA_DIR_ENV).is_some() => {
                    ServerConfig::parse(&format!("{t}\ndata_dir = .\n"))
                }
                other => Err(other),
            })
        };
        let mut config = with_dir(&text)?;
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            config.data_dir = PathBuf::from(dir);
        } else if config.data_dir.is_relative() {
            if let Some(parent) = path.parent() {
                config.data_dir = parent.join(&config.data_dir);
            }
        }
        Ok(config)
    }
}
