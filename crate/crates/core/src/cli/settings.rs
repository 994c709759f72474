use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::Value;

use crate::error::{Error, Result};

/// A setting a command accepts, with its default and a one-line description.
#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

/// Keys every command accepts.
pub const COMMON: [Key; 3] = [
    key("seed", "0", "seed for every random draw"),
    key("threads", "1", "worker threads; 1 gives bitwise determinism"),
    key("out", "out", "output directory"),
];

fn usage(key: &str, message: impl Into<String>) -> Error {
    Error::Usage {
        key: key.into(),
        message: message.into(),
    }
}

/// Resolved key=value settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub command: String,
    values: BTreeMap<String, String>,
}

fn scalar(key: &str, v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        Value::Array(items) => items
            .iter()
            .map(|i| scalar(key, i))
            .collect::<Result<Vec<_>>>()
            .map(|v| v.join(",")),
        _ => Err(usage(key, "expected a scalar or a list of scalars")),
    }
}

impl Settings {
    /// Defaults, then the config file, then `KEY=VALUE` overrides, then dedicated flags.
    pub fn resolve(
        command: &str,
        keys: &[Key],
        file: Option<&Path>,
        overrides: &[String],
        flags: &[(&str, Option<String>)],
    ) -> Result<Self> {
        let mut values: BTreeMap<String, String> = COMMON
            .iter()
            .chain(keys)
            .map(|k| (k.name.to_string(), k.default.to_string()))
            .collect();
        if let Some(values) = values.get_mut("out") {
            *values = format!("out/{command}");
        }
        let known = |k: &str, values: &BTreeMap<String, String>| {
            if values.contains_key(k) {
                Ok(())
            } else {
                Err(usage(k, format!("unknown key for `{command}`")))
            }
        };
        if let Some(path) = file {
            let text = fs::read_to_string(path)?;
            let parsed: Value = serde_json::from_str(&text).map_err(|e| Error::Data {
                path: path.to_path_buf(),
                record: e.line(),
                message: e.to_string(),
            })?;
            let Value::Object(map) = parsed else {
                return Err(Error::Data {
                    path: path.to_path_buf(),
                    record: 1,
                    message: "config must be a JSON object".into(),
                });
            };
            for (k, v) in &map {
                known(k, &values)?;
                let v = scalar(k, v)?;
                values.insert(k.clone(), v);
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| usage(o, "expected KEY=VALUE"))?;
            let k = k.trim();
            known(k, &values)?;
            values.insert(k.into(), v.trim().into());
        }
        for (k, v) in flags {
            if let Some(v) = v {
                values.insert((*k).into(), v.clone());
            }
        }
        Ok(Self {
            command: command.into(),
            values,
        })
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("declared key")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.str(key);
        raw.parse().map_err(|e: T::Err| usage(key, format!("cannot parse `{raw}`: {e}")))
    }

    /// `None` for an empty value or `none`.
    pub fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.str(key) {
            "" | "none" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.str(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e: T::Err| usage(key, format!("cannot parse `{s}`: {e}"))))
            .collect()
    }

    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.str(key))
    }

    pub fn choice<'a>(&self, key: &str, options: &[&'a str]) -> Result<&'a str> {
        let v = self.str(key);
        options
            .iter()
            .find(|o| **o == v)
            .copied()
            .ok_or_else(|| usage(key, format!("`{v}` is not one of {}", options.join(", "))))
    }

    pub fn to_json(&self) -> Value {
        let mut map = serde_json::Map::new();
        map.insert("command".into(), Value::String(self.command.clone()));
        let settings = self.values.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
        map.insert("settings".into(), Value::Object(settings));
        Value::Object(map)
    }
}

/// Help text listing every key, its default and description.
pub fn describe(keys: &[Key]) -> String {
    let mut s = String::from("Settings (config file or --set KEY=VALUE):\n");
    for k in COMMON.iter().chain(keys) {
        s.push_str(&format!("  {:<20} {:<24} {}\n", k.name, format!("[{}]", k.default), k.help));
    }
    s
}
