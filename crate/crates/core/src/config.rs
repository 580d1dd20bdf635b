//! Dotted `key=value` overrides applied on top of a parsed [`RunConfig`].

use std::path::Path;

use serde_json::Value;

use crate::datagen::Shape;
use crate::error::{invalid, Error, Result};
use crate::trainer::RunConfig;

/// Parse the right-hand side of an override: JSON if it parses, otherwise a
/// bare string. Shape names such as `dirichlet_a0.5_s2` are expanded.
fn parse_value(key: &str, raw: &str) -> Result<Value> {
    if key == "shape" || key.ends_with(".shape") {
        if let Ok(v) = serde_json::from_str::<Value>(raw) {
            if v.is_object() {
                return Ok(v);
            }
        }
        return Ok(serde_json::to_value(Shape::parse(raw.trim_matches('"'))?)?);
    }
    Ok(serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string())))
}

/// Set `path` (dot-separated) inside `root`; the path must already exist.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| invalid(format!("`{path}`: `{part}` is not inside an object")))?;
        let slot = obj.get_mut(*part).ok_or_else(|| invalid(format!("unknown config key `{path}`")))?;
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        cur = slot;
    }
    Err(invalid("empty override key"))
}

pub fn split_override(s: &str) -> Result<(&str, &str)> {
    let (k, v) = s.split_once('=').ok_or_else(|| invalid(format!("override `{s}` is not key=value")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(invalid(format!("override `{s}` has an empty key")));
    }
    Ok((k, v.trim()))
}

/// Parse a JSON configuration. Missing fields take their defaults; unknown
/// fields are rejected. A `resolved-config.json` written by the CLI (an
/// object with a `config` member) is accepted as well.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let v: Value = serde_json::from_str(text).map_err(|e| invalid(format!("config is not valid JSON: {e}")))?;
    let cfg: RunConfig = match (v.get("config"), v.get("overrides")) {
        (Some(inner), Some(_)) => serde_json::from_value(inner.clone()).map_err(|e| invalid(e.to_string()))?,
        _ => serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| match e {
        Error::InvalidArgument(m) => invalid(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn apply_overrides<S: AsRef<str>>(cfg: &RunConfig, overrides: &[S]) -> Result<RunConfig> {
    let mut v = serde_json::to_value(cfg)?;
    for o in overrides {
        let (k, raw) = split_override(o.as_ref())?;
        set_path(&mut v, k, parse_value(k, raw)?)?;
    }
    let out: RunConfig = serde_json::from_value(v).map_err(|e| invalid(format!("override: {e}")))?;
    Ok(out)
}
