//! Layered TOML configuration: defaults, then a config file, then dotted
//! `key=value` overrides. Unknown keys surface when the merged table is
//! deserialised into a `deny_unknown_fields` type.

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::error::{Error, Result};

/// Recursively overlays `over` onto `base`; tables merge, everything else replaces.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Parses an override value as a TOML literal, falling back to a bare string.
pub(crate) fn parse_scalar(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Sets `a.b.c = raw`, creating intermediate tables.
pub fn apply_override(root: &mut Value, dotted: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{dotted}`")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let Value::Table(t) = node else {
            return Err(Error::Config(format!("override `{dotted}`: `{part}` is not a table")));
        };
        node = t.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
    }
    let Value::Table(t) = node else {
        return Err(Error::Config(format!("override `{dotted}` does not address a table entry")));
    };
    t.insert(parts[parts.len() - 1].to_string(), parse_scalar(raw));
    Ok(())
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not of the form key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Defaults ← file ← overrides, then deserialise.
pub fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, file: Option<&str>, overrides: &[(String, String)]) -> Result<T> {
    let mut root = Value::try_from(defaults).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(src) = file {
        let user: Table = toml::from_str(src).map_err(|e| Error::parse("config file", e))?;
        merge(&mut root, Value::Table(user));
    }
    for (k, v) in overrides {
        apply_override(&mut root, k, v)?;
    }
    root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

pub fn to_toml_string<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Inner {
        lr: f64,
        name: String,
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Outer {
        seed: u64,
        inner: Inner,
    }

    fn defaults() -> Outer {
        Outer {
            seed: 1,
            inner: Inner {
                lr: 0.1,
                name: "a".into(),
            },
        }
    }

    #[test]
    fn precedence() {
        let file = "seed = 5\n[inner]\nlr = 0.5\n";
        let out: Outer = resolve(&defaults(), Some(file), &[("inner.lr".into(), "0.25".into())]).unwrap();
        assert_eq!(out.seed, 5);
        assert_eq!(out.inner.lr, 0.25);
        assert_eq!(out.inner.name, "a");
        let out: Outer = resolve(&defaults(), None, &[("inner.name".into(), "some path/x".into())]).unwrap();
        assert_eq!(out.inner.name, "some path/x");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(resolve(&defaults(), Some("sede = 5"), &[]).is_err());
        assert!(resolve(&defaults(), None, &[("inner.lrr".into(), "1".into())]).is_err());
        assert!(parse_override("novalue").is_err());
        assert!(apply_override(&mut Value::Table(Table::new()), "a..b", "1").is_err());
    }
}
