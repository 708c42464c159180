//! Run configuration from a JSON or `key = value` file plus `--set` overrides.
//!
//! Dotted keys address nested tables: `knn.block_size = 100`. A value is
//! read as JSON when it parses as JSON and as a plain string otherwise.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::CliError;

fn insert_dotted(root: &mut Map<String, Value>, key: &str, value: Value) -> Result<(), CliError> {
    let mut parts = key.split('.').map(str::trim).peekable();
    let mut table = root;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(CliError::Usage(format!("empty segment in config key `{key}`")));
        }
        if parts.peek().is_none() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        let slot = table.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        table = slot
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("config key `{key}` nests under a non-table value")))?;
    }
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn parse_assignment(root: &mut Map<String, Value>, line: &str, origin: &str) -> Result<(), CliError> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("{origin}: expected `key = value`, got `{line}`")))?;
    insert_dotted(root, k.trim(), parse_value(v))
}

fn parse_text(text: &str, origin: &str) -> Result<Map<String, Value>, CliError> {
    if text.trim_start().starts_with('{') {
        return match serde_json::from_str(text) {
            Ok(Value::Object(m)) => Ok(m),
            Ok(_) => Err(CliError::Usage(format!("{origin}: config must be a JSON object"))),
            Err(e) => Err(CliError::Usage(format!("{origin}: {e}"))),
        };
    }
    let mut root = Map::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        parse_assignment(&mut root, line, &format!("{origin} line {}", n + 1))?;
    }
    Ok(root)
}

/// Merge the config file (if any) with `--set` overrides and deserialize.
/// Returns the parsed config and its canonical JSON echo.
pub fn load<T: DeserializeOwned + serde::Serialize>(file: Option<&Path>, sets: &[String]) -> Result<(T, Value), CliError> {
    let mut root = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            parse_text(&text, &p.display().to_string())?
        }
        None => Map::new(),
    };
    for s in sets {
        parse_assignment(&mut root, s, "--set")?;
    }
    let config: T = serde_json::from_value(Value::Object(root)).map_err(|e| CliError::Usage(format!("config: {e}")))?;
    let echo = serde_json::to_value(&config).expect("config serializes");
    Ok((config, echo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::{Deserialize, Serialize};

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Inner {
        size: usize,
        name: String,
    }

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Outer {
        threshold: f64,
        inner: Inner,
    }

    #[test]
    fn key_value_and_json_agree() {
        let kv = parse_text("# comment\nthreshold = 14\ninner.size=3\ninner.name = abc\n", "t").unwrap();
        let js = parse_text(r#"{"threshold": 14, "inner": {"size": 3, "name": "abc"}}"#, "t").unwrap();
        assert_eq!(kv, js);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let (c, _): (Outer, _) = load(None, &["inner.size=9".into(), "threshold=2.5".into()]).unwrap();
        assert_eq!(c, Outer { threshold: 2.5, inner: Inner { size: 9, name: String::new() } });
        assert!(matches!(load::<Outer>(None, &["bogus=1".into()]), Err(CliError::Usage(_))));
        assert!(matches!(load::<Outer>(None, &["no equals".into()]), Err(CliError::Usage(_))));
        assert!(matches!(load::<Outer>(None, &["threshold=1".into(), "threshold.x=2".into()]), Err(CliError::Usage(_))));
    }
}
