//! Flat `key = value` configuration text.
//!
//! One pair per line; `#` starts a comment; blank lines are ignored. Later
//! keys override earlier ones when applied in order.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {reason}")]
pub struct KvError {
    pub line: usize,
    pub reason: String,
}

pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, KvError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| KvError {
            line: i + 1,
            reason: format!("expected `key = value`, found `{line}`"),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(KvError {
                line: i + 1,
                reason: "empty key".into(),
            });
        }
        pairs.push((k.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Parses a value, naming the key in the error.
pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("{key} = `{value}`: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blanks() {
        let pairs = parse_kv("# header\n\na = 1\n b=two words # trailing\n").unwrap();
        assert_eq!(pairs, vec![("a".into(), "1".into()), ("b".into(), "two words".into())]);
    }

    #[test]
    fn missing_equals() {
        assert_eq!(parse_kv("a = 1\nnonsense\n").unwrap_err().line, 2);
    }
}
