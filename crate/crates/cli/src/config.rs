//! Flat key/value settings: command-line flag, then config file, then default.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliResult, Failure};

pub struct Settings {
    file: Map<String, Value>,
    effective: BTreeMap<String, Value>,
}

impl Settings {
    pub fn empty() -> Self {
        Self { file: Map::new(), effective: BTreeMap::new() }
    }

    /// Reads a flat TOML file, or the `config` object of a JSON run manifest.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::empty());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        Self::parse(&text, path.extension().is_some_and(|e| e == "json"))
    }

    pub fn parse(text: &str, json: bool) -> CliResult<Self> {
        let value = if json {
            let doc: Value =
                serde_json::from_str(text).map_err(|e| Failure::usage(format!("config is not valid JSON: {e}")))?;
            doc.get("config")
                .cloned()
                .ok_or_else(|| Failure::usage("JSON config must be a run manifest with a `config` object"))?
        } else {
            let table: toml::Table = text.parse().map_err(|e| Failure::usage(format!("config: {e}")))?;
            serde_json::to_value(table).map_err(|e| Failure::usage(format!("config: {e}")))?
        };
        match value {
            Value::Object(file) => {
                if let Some((k, _)) = file.iter().find(|(_, v)| v.is_object()) {
                    return Err(Failure::usage(format!("config key `{k}`: sections are not supported")));
                }
                Ok(Self { file, effective: BTreeMap::new() })
            }
            _ => Err(Failure::usage("config must be a table of keys")),
        }
    }

    pub fn pick<T: DeserializeOwned + Serialize>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T> {
        let value = match (flag, self.file.get(key)) {
            (Some(v), _) => v,
            (None, Some(raw)) => serde_json::from_value(raw.clone())
                .map_err(|e| Failure::usage(format!("config key `{key}`: {e}")))?,
            (None, None) => default,
        };
        self.record(key, &value);
        Ok(value)
    }

    /// Like [`pick`](Self::pick) without a default; absent keys stay `None`.
    pub fn pick_opt<T: DeserializeOwned + Serialize>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>> {
        let value = match (flag, self.file.get(key)) {
            (Some(v), _) => Some(v),
            (None, Some(raw)) => Some(
                serde_json::from_value(raw.clone())
                    .map_err(|e| Failure::usage(format!("config key `{key}`: {e}")))?,
            ),
            (None, None) => None,
        };
        if let Some(v) = &value {
            self.record(key, v);
        }
        Ok(value)
    }

    fn record<T: Serialize>(&mut self, key: &str, value: &T) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.effective.insert(key.to_string(), v);
    }

    /// Effective configuration; fails on file keys no option consumed.
    pub fn finish(self) -> CliResult<BTreeMap<String, Value>> {
        if let Some(k) = self.file.keys().find(|k| !self.effective.contains_key(*k)) {
            return Err(Failure::usage(format!("unknown config key `{k}`")));
        }
        Ok(self.effective)
    }
}
