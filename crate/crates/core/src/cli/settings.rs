//! Flat `key = value` run settings with layered precedence.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Resolved settings for one run. Keys are fixed by the defaults; files and
/// flags may only override known keys.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn with_defaults(defaults: &[(&str, String)]) -> Self {
        Self { values: defaults.iter().map(|(k, v)| (k.to_string(), v.clone())).collect() }
    }

    pub fn parse_text(text: &str) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::config(format!("line {}: expected key = value, got {raw:?}", i + 1)));
            };
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.into();
                Ok(())
            }
            None => Err(Error::config(format!("unknown setting {key:?}"))),
        }
    }

    /// Overrides known keys from a config file. Unknown keys are errors.
    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(Error::io_at(path))?;
        for (k, v) in Self::parse_text(&text)? {
            self.set(&k, v).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }

    /// Overrides only the keys in `keys` that `other` defines.
    pub fn merge_keys(&mut self, other: &[(String, String)], keys: &[&str]) -> Result<()> {
        for (k, v) in other {
            if keys.contains(&k.as_str()) {
                self.set(k, v.clone())?;
            }
        }
        Ok(())
    }

    pub fn apply_flags(&mut self, flags: Vec<(&str, Option<String>)>) -> Result<()> {
        for (k, v) in flags {
            if let Some(v) = v {
                self.set(k, v)?;
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("setting {key} has no default"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| Error::config(format!("{key} = {raw:?}: {e}")))
    }

    /// `None` for an empty value.
    pub fn optional(&self, key: &str) -> Option<&str> {
        Some(self.raw(key)).filter(|v| !v.is_empty())
    }

    /// Comma-separated list; an empty value is an empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| Error::config(format!("{key} entry {s:?}: {e}"))))
            .collect()
    }

    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }
}

pub fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}
