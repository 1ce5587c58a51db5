//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are dotted
//! (`pretrain.steps`, `model.d_model`); unknown keys are an error.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if entries
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", i + 1)));
            }
        }
        Ok(ConfigMap { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Removes and parses `key`, leaving `target` untouched when absent.
    pub fn take<T>(&mut self, key: &str, target: &mut T) -> Result<()>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if let Some(raw) = self.entries.remove(key) {
            *target = raw
                .parse()
                .map_err(|e| Error::Config(format!("{key} = {raw:?}: {e}")))?;
        }
        Ok(())
    }

    pub fn take_string(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    /// Fails if any key was not consumed.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
            Err(Error::Config(format!("unknown keys: {}", keys.join(", "))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_consumes() {
        let mut c = ConfigMap::parse("# comment\n\nsteps = 40\nmode=dual\n").unwrap();
        let mut steps = 1usize;
        let mut lr = 0.5f64;
        c.take("steps", &mut steps).unwrap();
        c.take("lr", &mut lr).unwrap();
        assert_eq!((steps, lr), (40, 0.5));
        assert_eq!(c.take_string("mode").as_deref(), Some("dual"));
        c.finish().unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ConfigMap::parse("novalue").is_err());
        assert!(ConfigMap::parse("a=1\na=2").is_err());
        let mut c = ConfigMap::parse("steps = many\nextra = 1").unwrap();
        let mut steps = 0usize;
        assert!(c.take("steps", &mut steps).is_err());
        assert!(c.finish().is_err());
    }
}
