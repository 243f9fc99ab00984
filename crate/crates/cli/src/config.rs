//! Layered run configuration: defaults, then a TOML file, then flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Environment variables with this prefix are reserved for overrides.
pub const ENV_PREFIX: &str = "FACEFIELD_";

/// Flag-level overrides as a sparse JSON object keyed by dotted paths.
#[derive(Debug, Default)]
pub struct Overrides(Map<String, Value>);

impl Overrides {
    pub fn set(&mut self, path: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("flag values serialize");
        let mut keys: Vec<&str> = path.split('.').collect();
        let last = keys.pop().expect("non-empty path");
        let mut obj = &mut self.0;
        for k in keys {
            obj = obj
                .entry(k.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("override paths do not overlap");
        }
        obj.insert(last.to_string(), v);
    }

    pub fn opt(&mut self, path: &str, value: Option<impl Serialize>) {
        if let Some(v) = value {
            self.set(path, v);
        }
    }

    /// Applies `key.path=value` assignments; values parse as JSON and fall
    /// back to plain strings.
    pub fn assignments(&mut self, items: &[String]) -> Result<(), CliError> {
        for item in items {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {item:?}")))?;
            let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            self.set(k.trim(), value);
        }
        Ok(())
    }
}

/// Recursive merge of `overlay` into `base`. Keys absent from `base` are
/// rejected unless `base` is a single-key enum variant, which is replaced.
pub fn merge(base: &mut Value, overlay: Value, path: &str) -> Result<(), CliError> {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            let is_variant = b.len() == 1 && o.keys().any(|k| !b.contains_key(k));
            if is_variant && o.len() == 1 {
                *b = o;
                return Ok(());
            }
            for (k, v) in o {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &sub)?,
                    None => return Err(CliError::Usage(format!("unknown configuration key {sub:?}"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

pub fn read_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("reading config {}: {e}", path.display())))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("parsing config {}: {e}", path.display())))?;
    serde_json::to_value(table).map_err(|e| CliError::Usage(e.to_string()))
}

/// Defaults, then the optional config file, then flag overrides.
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<&Path>,
    flags: Overrides,
) -> Result<T, CliError> {
    let mut v = serde_json::to_value(defaults).expect("defaults serialize");
    if let Some(f) = file {
        merge(&mut v, read_file(f)?, "")?;
    }
    merge(&mut v, Value::Object(flags.0), "")?;
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}
