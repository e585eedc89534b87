//! `key = value` configuration files.
//!
//! One setting per line; `#` starts a comment; keys are long flag names
//! without the leading dashes. Boolean flags take `true` or `false`.

use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config line {}: {}", self.line, self.reason)
    }
}

impl std::error::Error for ConfigError {}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && !key.starts_with('-')
        && key
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

/// Settings in file order. Duplicate keys are rejected.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError {
            line,
            reason: format!("expected key = value, got {content:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !valid_key(key) {
            return Err(ConfigError {
                line,
                reason: format!("invalid key {key:?}"),
            });
        }
        if value.is_empty() {
            return Err(ConfigError {
                line,
                reason: format!("missing value for {key}"),
            });
        }
        if out.iter().any(|(k, _)| k == key) {
            return Err(ConfigError {
                line,
                reason: format!("duplicate key {key}"),
            });
        }
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

fn mentions(args: &[String], key: &str) -> bool {
    let flag = format!("--{key}");
    args.iter()
        .take_while(|a| a.as_str() != "--")
        .any(|a| *a == flag || a.strip_prefix(&flag).is_some_and(|rest| rest.starts_with('=')))
}

/// Appends every setting whose flag does not already appear in `args`.
/// `true` adds a bare flag and `false` adds nothing.
pub fn merge_under(args: &mut Vec<String>, settings: &[(String, String)]) {
    for (key, value) in settings {
        if mentions(args, key) {
            continue;
        }
        match value.as_str() {
            "true" => args.push(format!("--{key}")),
            "false" => {}
            _ => {
                args.push(format!("--{key}"));
                args.push(value.clone());
            }
        }
    }
}
