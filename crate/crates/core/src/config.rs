//! Flat `key = value` configuration text.
//!
//! ```text
//! # comment
//! seed = 7
//! [threshold]
//! h = 30          # stored as threshold.h
//! ```
//!
//! A `[section]` line prefixes the keys that follow with `section.`; keys may
//! also be written fully qualified. Repeating a key is an error.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(inner) = line.strip_prefix('[') {
                let name = inner.strip_suffix(']').ok_or_else(|| Error::Parse {
                    line: i + 1,
                    message: format!("unterminated section header `{line}`"),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            let key = if section.is_empty() {
                k.to_string()
            } else {
                format!("{section}.{k}")
            };
            if kv.entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Later values replace earlier ones (used for command-line overrides).
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn parsed<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("{key} = `{v}`: {e}")))
            })
            .transpose()
    }

    /// Comma-separated list.
    pub fn parsed_list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| parse_list(v).map_err(|e| Error::Config(format!("{key}: {e}"))))
            .transpose()
    }

    /// Keys under `prefix.`, without the prefix.
    pub fn section(&self, prefix: &str) -> KeyValues {
        let head = format!("{prefix}.");
        KeyValues {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&head).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn parse_list<T>(text: &str) -> std::result::Result<Vec<T>, String>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}
