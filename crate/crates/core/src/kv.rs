//! Flat `key = value` text format shared by config files, summaries and
//! sidecar stats. One entry per line; `#` starts a comment line; keys are
//! dotted identifiers; duplicate keys are rejected.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvEntry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvDoc {
    entries: Vec<KvEntry>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && !key.starts_with('.')
        && !key.ends_with('.')
        && !key.contains("..")
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-')
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<KvEntry> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((k, v)) = trimmed.split_once('=') else {
                return Err(Error::Syntax {
                    line,
                    message: format!("expected `key = value`, got `{trimmed}`"),
                });
            };
            let key = k.trim();
            if !valid_key(key) {
                return Err(Error::Syntax {
                    line,
                    message: format!("invalid key `{key}`"),
                });
            }
            if let Some(prev) = entries.iter().find(|e| e.key == key) {
                return Err(Error::Syntax {
                    line,
                    message: format!("duplicate key `{key}` (first set on line {})", prev.line),
                });
            }
            entries.push(KvEntry {
                line,
                key: key.to_string(),
                value: v.trim().to_string(),
            });
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[KvEntry] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|e| e.key == key).map(|e| e.value.as_str())
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        let line = self.entries.len() + 1;
        self.entries.push(KvEntry {
            line,
            key: key.into(),
            value: value.to_string(),
        });
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{} = {}", e.key, e.value);
        }
        out
    }
}

/// Formats an optional float as `none` when absent.
pub fn opt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}
