//! Plain-text `key = value` format shared by config files and the MDP /
//! policy serializers.
//!
//! One entry per line, `#` starts a comment, values are a single token or a
//! whitespace-separated list of numbers. Later entries override earlier ones.

use crate::error::{RcrlError, Result};

/// Ordered key-value map parsed from the text format.
#[derive(Debug, Clone, Default)]
pub struct KvMap {
    entries: Vec<(String, String)>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(RcrlError::Parse {
                line: idx + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(RcrlError::Parse {
                    line: idx + 1,
                    message: "empty key".into(),
                });
            }
            entries.push((key.to_string(), value.trim().to_string()));
        }
        Ok(Self { entries })
    }

    /// Sets `key`, overriding any earlier entry with the same name.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    /// Last value recorded for `key`, if any.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| RcrlError::InvalidArgument(format!("missing config key `{key}`")))
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|v| parse_num(key, v)).transpose()
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key).map(|v| parse_num(key, v)).transpose()
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key).map(|v| parse_num(key, v)).transpose()
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => match v {
                "true" | "1" => Ok(Some(true)),
                "false" | "0" => Ok(Some(false)),
                other => Err(RcrlError::InvalidArgument(format!(
                    "key `{key}`: expected boolean, got `{other}`"
                ))),
            },
        }
    }

    /// Whitespace-separated list of floats.
    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| v.split_whitespace().map(|tok| parse_num(key, tok)).collect())
            .transpose()
    }

    /// Whitespace-separated list of unsigned integers.
    pub fn get_u64_list(&self, key: &str) -> Result<Option<Vec<u64>>> {
        self.get(key)
            .map(|v| v.split_whitespace().map(|tok| parse_num(key, tok)).collect())
            .transpose()
    }

    /// All `(key, value)` entries in file order (duplicates included).
    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, token: &str) -> Result<T> {
    token.parse().map_err(|_| {
        RcrlError::InvalidArgument(format!("key `{key}`: cannot parse `{token}`"))
    })
}

/// Formats a float slice as a single space-separated value string.
pub fn join_numbers(values: &[f64]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{v}"));
    }
    out
}
