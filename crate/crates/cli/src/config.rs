//! `key = value` experiment configuration with typed, key-naming accessors.

use crate::CliError;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
    read: std::cell::RefCell<BTreeSet<String>>,
}

fn bad(key: &str, msg: impl Into<String>) -> CliError {
    CliError::Config { key: key.to_string(), msg: msg.into() }
}

impl Config {
    /// Parse `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(bad("config", format!("line {}: expected key = value, got {line:?}", i + 1)));
            };
            let k = k.trim();
            if k.is_empty() {
                return Err(bad("config", format!("line {}: empty key", i + 1)));
            }
            cfg.set(k, v.trim());
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.replace('-', "_"), value.into());
    }

    /// `key=value` override from the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        match pair.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => {
                self.set(k.trim(), v.trim());
                Ok(())
            }
            _ => Err(bad("set", format!("expected key=value, got {pair:?}"))),
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.read.borrow_mut().insert(key.to_string());
        self.values.get(key).map(String::as_str)
    }

    pub fn has(&self, key: &str) -> bool {
        self.raw(key).is_some()
    }

    pub fn string(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize, CliError> {
        self.opt_usize(key).map(|v| v.unwrap_or(default))
    }

    pub fn opt_usize(&self, key: &str) -> Result<Option<usize>, CliError> {
        self.raw(key)
            .map(|v| v.parse().map_err(|_| bad(key, format!("expected a nonnegative integer, got {v:?}"))))
            .transpose()
    }

    pub fn positive(&self, key: &str, default: usize) -> Result<usize, CliError> {
        match self.usize(key, default)? {
            0 => Err(bad(key, "must be at least 1")),
            v => Ok(v),
        }
    }

    pub fn u64(&self, key: &str, default: u64) -> Result<u64, CliError> {
        self.raw(key)
            .map(|v| v.parse().map_err(|_| bad(key, format!("expected a nonnegative integer, got {v:?}"))))
            .transpose()
            .map(|v| v.unwrap_or(default))
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(bad(key, format!("expected a finite number, got {v:?}"))),
            },
        }
    }

    pub fn bool(&self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "1" | "yes" | "on") => Ok(true),
            Some("false" | "0" | "no" | "off") => Ok(false),
            Some(v) => Err(bad(key, format!("expected true or false, got {v:?}"))),
        }
    }

    /// `None` for `none`, otherwise a finite number.
    pub fn snr(&self, key: &str, default: Option<f64>) -> Result<Option<f64>, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some("none" | "inf") => Ok(None),
            Some(_) => self.f64(key, 0.0).map(Some),
        }
    }

    /// Comma-separated list; empty lists are rejected.
    pub fn list<T: std::str::FromStr>(&self, key: &str, default: &[T]) -> Result<Vec<T>, CliError>
    where
        T: Clone,
    {
        let Some(v) = self.raw(key) else { return Ok(default.to_vec()) };
        let out = v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<T>().map_err(|_| bad(key, format!("cannot parse list entry {s:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if out.is_empty() {
            return Err(bad(key, "list is empty"));
        }
        Ok(out)
    }

    /// Path that must exist.
    pub fn existing_path(&self, key: &str) -> Result<PathBuf, CliError> {
        let Some(v) = self.raw(key) else { return Err(bad(key, "is required")) };
        let p = PathBuf::from(v);
        if !p.exists() {
            return Err(bad(key, format!("path {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn out_dir(&self) -> Result<PathBuf, CliError> {
        self.raw("out").map(PathBuf::from).ok_or_else(|| bad("out", "is required"))
    }

    /// Reject keys that no accessor looked at.
    pub fn finish(&self) -> Result<(), CliError> {
        let read = self.read.borrow();
        match self.values.keys().find(|k| !read.contains(*k)) {
            Some(k) => Err(bad(k, "unknown key for this command")),
            None => Ok(()),
        }
    }
}
