//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Later keys override earlier
//! ones; every key must be consumed by the reader or loading fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Default)]
pub struct FlatConfig {
    source: PathBuf,
    entries: BTreeMap<String, (usize, String)>,
}

impl FlatConfig {
    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: source.to_path_buf(),
                line: i + 1,
                msg: format!("expected `key = value`, found `{line}`"),
            })?;
            entries.insert(key.trim().to_string(), (i + 1, value.trim().to_string()));
        }
        Ok(FlatConfig {
            source: source.to_path_buf(),
            entries,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).at(path)?, path)
    }

    /// Sets or replaces a key, e.g. from a command-line flag.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), (0, value.to_string()));
    }

    /// Removes and parses `key` into `slot` when present.
    pub fn take<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some((line, raw)) = self.entries.remove(key) {
            *slot = raw.parse().map_err(|e| Error::Parse {
                path: self.source.clone(),
                line,
                msg: format!("`{key}`: {e}"),
            })?;
        }
        Ok(())
    }

    /// Reads `lo, hi` into a pair.
    pub fn take_range(&mut self, key: &str, slot: &mut (f64, f64)) -> Result<()> {
        if let Some((line, raw)) = self.entries.remove(key) {
            let err = |msg: String| Error::Parse {
                path: self.source.clone(),
                line,
                msg,
            };
            let (a, b) = raw.split_once(',').ok_or_else(|| err(format!("`{key}` needs `lo, hi`")))?;
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| err(format!("`{key}`: {e}")));
            *slot = (parse(a)?, parse(b)?);
            if slot.0 > slot.1 {
                return Err(err(format!("`{key}`: empty range")));
            }
        }
        Ok(())
    }

    /// Fails on any key no reader consumed.
    pub fn finish(self) -> Result<()> {
        if let Some((key, (line, _))) = self.entries.into_iter().next() {
            return Err(Error::Parse {
                path: self.source,
                line,
                msg: format!("unknown key `{key}`"),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let mut c = FlatConfig::parse("# c\nepochs = 3\n\nlr=0.5 # trailing\nrange = 0.1, 0.9\n", Path::new("c")).unwrap();
        c.set("epochs", 7);
        let (mut epochs, mut lr, mut range) = (0usize, 0.0f64, (0.0, 0.0));
        c.take("epochs", &mut epochs).unwrap();
        c.take("lr", &mut lr).unwrap();
        c.take_range("range", &mut range).unwrap();
        c.finish().unwrap();
        assert_eq!((epochs, lr, range), (7, 0.5, (0.1, 0.9)));
    }

    #[test]
    fn errors_carry_lines() {
        assert!(matches!(FlatConfig::parse("a = 1\nnope\n", Path::new("c")), Err(Error::Parse { line: 2, .. })));
        let mut c = FlatConfig::parse("a = x\n", Path::new("c")).unwrap();
        let mut a = 0u32;
        assert!(matches!(c.take("a", &mut a), Err(Error::Parse { line: 1, .. })));
        let c = FlatConfig::parse("\nmystery = 1\n", Path::new("c")).unwrap();
        assert!(matches!(c.finish(), Err(Error::Parse { line: 2, .. })));
    }
}
