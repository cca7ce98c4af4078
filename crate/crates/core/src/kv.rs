//! Flat `key = value` text, one entry per line, `#` starts a comment.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    /// 1-based source line.
    pub line: usize,
}

/// Ordered entries of one config text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvText {
    entries: Vec<Entry>,
}

impl KvText {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<Entry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config(format!("line {line}: expected `key = value`, got `{content}`")));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {line}: empty key")));
            }
            if let Some(prev) = entries.iter().find(|e| e.key == key) {
                return Err(Error::Config(format!(
                    "line {line}: key `{key}` already set on line {}",
                    prev.line
                )));
            }
            entries.push(Entry {
                key: key.to_string(),
                value: value.trim().to_string(),
                line,
            });
        }
        Ok(KvText { entries })
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.retain(|e| e.key != key);
        let line = self.entries.len() + 1;
        self.entries.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line,
        });
    }

    /// Parses `key` when present.
    pub fn parse_opt<V: FromStr>(&self, key: &str) -> Result<Option<V>> {
        match self.get(key) {
            None => Ok(None),
            Some(e) => e.value.parse().map(Some).map_err(|_| {
                Error::Config(format!("line {}: invalid value `{}` for `{key}`", e.line, e.value))
            }),
        }
    }

    pub fn require<V: FromStr>(&self, key: &str) -> Result<V> {
        self.parse_opt(key)?
            .ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    /// Rejects keys outside `known`, naming the first offender's line.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.entries.iter().find(|e| !known.contains(&e.key.as_str())) {
            Some(e) => Err(Error::Config(format!("line {}: unknown key `{}`", e.line, e.key))),
            None => Ok(()),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.key);
            out.push_str(" = ");
            out.push_str(&e.value);
            out.push('\n');
        }
        out
    }
}
