//! Line-based sectioned configuration.
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! ```
//!
//! Values are typed on read through a [`Resolver`], which records every key
//! it touches along with the defaults it filled in. Finishing the resolver
//! rejects unknown keys and yields the fully resolved configuration, which
//! every command echoes into its output directory.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown key {section}.{key}")]
    UnknownKey { section: String, key: String },
    #[error("{section}.{key}: expected {expected}, got {value:?}")]
    BadValue {
        section: String,
        key: String,
        expected: &'static str,
        value: String,
    },
    #[error("missing required key {section}.{key}")]
    Missing { section: String, key: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<(String, String), String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(ConfigError::Parse {
                    line: idx + 1,
                    msg: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
                line: idx + 1,
                msg: "expected key = value".into(),
            })?;
            if section.is_empty() {
                return Err(ConfigError::Parse {
                    line: idx + 1,
                    msg: "key outside any [section]".into(),
                });
            }
            values.insert(
                (section.clone(), key.trim().to_string()),
                value.trim().to_string(),
            );
        }
        Ok(Config { values })
    }

    pub fn from_file(path: &Path) -> Result<Config, ConfigError> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.values
            .get(&(section.to_string(), key.to_string()))
            .map(|s| s.as_str())
    }

    pub fn resolver(&self) -> Resolver<'_> {
        Resolver {
            cfg: self,
            resolved: RefCell::new(BTreeMap::new()),
        }
    }
}

/// Typed access with defaults, usage tracking, and unknown-key rejection.
pub struct Resolver<'a> {
    cfg: &'a Config,
    resolved: RefCell<BTreeMap<(String, String), String>>,
}

impl Resolver<'_> {
    fn record(&self, section: &str, key: &str, value: String) {
        self.resolved
            .borrow_mut()
            .insert((section.to_string(), key.to_string()), value);
    }

    fn lookup(&self, section: &str, key: &str) -> Option<String> {
        self.cfg.raw(section, key).map(|s| s.to_string())
    }

    pub fn str(&self, section: &str, key: &str, default: &str) -> String {
        let v = self
            .lookup(section, key)
            .unwrap_or_else(|| default.to_string());
        self.record(section, key, v.clone());
        v
    }

    pub fn require_str(&self, section: &str, key: &str) -> Result<String, ConfigError> {
        match self.lookup(section, key) {
            Some(v) => {
                self.record(section, key, v.clone());
                Ok(v)
            }
            None => Err(ConfigError::Missing {
                section: section.into(),
                key: key.into(),
            }),
        }
    }

    pub fn int(&self, section: &str, key: &str, default: i64) -> Result<i64, ConfigError> {
        let raw = self
            .lookup(section, key)
            .unwrap_or_else(|| default.to_string());
        self.record(section, key, raw.clone());
        raw.parse().map_err(|_| ConfigError::BadValue {
            section: section.into(),
            key: key.into(),
            expected: "integer",
            value: raw,
        })
    }

    pub fn usize(&self, section: &str, key: &str, default: usize) -> Result<usize, ConfigError> {
        let v = self.int(section, key, default as i64)?;
        usize::try_from(v).map_err(|_| ConfigError::BadValue {
            section: section.into(),
            key: key.into(),
            expected: "nonnegative integer",
            value: v.to_string(),
        })
    }

    pub fn float(&self, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        let raw = self
            .lookup(section, key)
            .unwrap_or_else(|| format!("{default}"));
        self.record(section, key, raw.clone());
        raw.parse().map_err(|_| ConfigError::BadValue {
            section: section.into(),
            key: key.into(),
            expected: "float",
            value: raw,
        })
    }

    pub fn flag(&self, section: &str, key: &str, default: bool) -> Result<bool, ConfigError> {
        let raw = self
            .lookup(section, key)
            .unwrap_or_else(|| default.to_string());
        self.record(section, key, raw.clone());
        match raw.as_str() {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(ConfigError::BadValue {
                section: section.into(),
                key: key.into(),
                expected: "boolean",
                value: raw,
            }),
        }
    }

    /// String constrained to a fixed set of variants.
    pub fn variant(
        &self,
        section: &str,
        key: &str,
        default: &str,
        allowed: &[&str],
    ) -> Result<String, ConfigError> {
        let v = self.str(section, key, default);
        if allowed.contains(&v.as_str()) {
            Ok(v)
        } else {
            Err(ConfigError::BadValue {
                section: section.into(),
                key: key.into(),
                expected: "one of the documented variants",
                value: v,
            })
        }
    }

    /// Rejects unknown keys, then renders the fully resolved configuration
    /// (defaults included) as config text.
    ///
    /// A config file may carry sections for several commands; a key is
    /// unknown when its section was consumed by this command but the key
    /// itself was never read.
    pub fn finish(&self) -> Result<String, ConfigError> {
        let resolved = self.resolved.borrow();
        let touched: std::collections::BTreeSet<&String> =
            resolved.keys().map(|(s, _)| s).collect();
        for (section, key) in self.cfg.values.keys() {
            if touched.contains(section)
                && !resolved.contains_key(&(section.clone(), key.clone()))
            {
                return Err(ConfigError::UnknownKey {
                    section: section.clone(),
                    key: key.clone(),
                });
            }
        }
        let mut out = String::new();
        let mut current = String::new();
        for ((section, key), value) in resolved.iter() {
            if *section != current {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{section}]\n"));
                current = section.clone();
            }
            out.push_str(&format!("{key} = {value}\n"));
        }
        Ok(out)
    }
}
