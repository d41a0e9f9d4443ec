//! Flat `key = value` run configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Recognized key with its default (`""` for unset) and help text.
#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

/// Effective settings: defaults, then the config file, then flags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
    explicit: BTreeSet<String>,
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{}:{}: expected `key = value`",
                origin.display(),
                i + 1
            )));
        };
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

impl Settings {
    /// Layers `file` then `flags` over the defaults of `keys`; unknown keys
    /// are rejected.
    pub fn merge(
        keys: &[Key],
        file: Option<BTreeMap<String, String>>,
        flags: BTreeMap<String, String>,
    ) -> Result<Settings> {
        let mut values: BTreeMap<String, String> = keys
            .iter()
            .map(|k| (k.name.to_string(), k.default.to_string()))
            .collect();
        let mut explicit = BTreeSet::new();
        for layer in file.into_iter().chain(std::iter::once(flags)) {
            for (k, v) in layer {
                if !values.contains_key(&k) {
                    return Err(Error::Config(format!("unknown key {k:?}")));
                }
                explicit.insert(k.clone());
                values.insert(k, v);
            }
        }
        Ok(Settings { values, explicit })
    }

    pub fn raw(&self, k: &str) -> &str {
        self.values.get(k).map(String::as_str).unwrap_or("")
    }

    /// Whether `k` came from the config file or a flag.
    pub fn is_explicit(&self, k: &str) -> bool {
        self.explicit.contains(k)
    }

    pub fn is_set(&self, k: &str) -> bool {
        !self.raw(k).is_empty()
    }

    pub fn get<T: FromStr>(&self, k: &str) -> Result<T> {
        let raw = self.raw(k);
        if raw.is_empty() {
            return Err(Error::Config(format!("missing required setting {k:?}")));
        }
        raw.parse()
            .map_err(|_| Error::Config(format!("cannot parse {k} = {raw:?}")))
    }

    pub fn opt<T: FromStr>(&self, k: &str) -> Result<Option<T>> {
        if self.is_set(k) {
            self.get(k).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn path(&self, k: &str) -> Result<PathBuf> {
        self.get::<String>(k).map(PathBuf::from)
    }

    pub fn set(&mut self, k: &str, v: impl Into<String>) {
        self.values.insert(k.to_string(), v.into());
    }

    /// Config-file text that reproduces these settings.
    pub fn dump(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
