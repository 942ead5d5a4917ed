//! Structured run configuration: an INI-like text format of `[section]`
//! headers over `key = value` lines, with `#` comments.
//!
//! Values are kept as strings and converted on access through typed getters,
//! so a single parse pass can validate every pipeline stage before any work
//! starts. Any key can be replaced from the command line with an override of
//! the form `section.key=value`. A configuration also has a canonical text
//! form — entries sorted by section and key — whose FNV-1a hash identifies it
//! in output provenance headers regardless of declaration order.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// One configuration binding.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    section: String,
    key: String,
    value: String,
}

/// Parsed configuration: a flat list of `(section, key, value)` bindings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    entries: Vec<Entry>,
}

/// Configuration errors.
#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    /// Malformed line in a configuration file.
    Syntax { line: usize, message: String },
    /// Malformed `--set` override.
    BadOverride { spec: String },
    /// A key outside the declared schema (typically a typo).
    UnknownKey { path: String },
    /// A key the command requires but the configuration does not define.
    MissingKey { path: String },
    /// A value that does not parse as the requested type.
    BadValue { path: String, value: String, expected: &'static str },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(err) => write!(f, "configuration i/o: {err}"),
            ConfigError::Syntax { line, message } => {
                write!(f, "configuration syntax (line {line}): {message}")
            }
            ConfigError::BadOverride { spec } => {
                write!(f, "override `{spec}` is not of the form section.key=value")
            }
            ConfigError::UnknownKey { path } => write!(f, "unknown configuration key `{path}`"),
            ConfigError::MissingKey { path } => write!(f, "missing configuration key `{path}`"),
            ConfigError::BadValue { path, value, expected } => {
                write!(f, "configuration key `{path}`: `{value}` is not {expected}")
            }
        }
    }
}

impl std::error::Error for ConfigError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            ConfigError::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for ConfigError {
    fn from(err: std::io::Error) -> Self {
        ConfigError::Io(err)
    }
}

/// FNV-1a 64-bit hash, the stable fingerprint used in provenance headers.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &byte in bytes {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Strips an inline comment: a `#` at the start of the line or preceded by
/// whitespace begins a comment (so values such as `a#b` survive).
fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

impl Config {
    /// Parses configuration text. Every key must live under a `[section]`
    /// header; a key defined twice in the same section is an error.
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut entries: Vec<Entry> = Vec::new();
        let mut section: Option<String> = None;
        for (index, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            let number = index + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(ConfigError::Syntax {
                    line: number,
                    message: "unterminated section header".to_string(),
                })?;
                let name = name.trim();
                if name.is_empty() || name.contains('.') {
                    return Err(ConfigError::Syntax {
                        line: number,
                        message: format!("bad section name `{name}`"),
                    });
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax {
                line: number,
                message: "expected `key = value`".to_string(),
            })?;
            let key = key.trim();
            if key.is_empty() || key.contains('.') {
                return Err(ConfigError::Syntax {
                    line: number,
                    message: format!("bad key `{key}`"),
                });
            }
            let section = section.clone().ok_or(ConfigError::Syntax {
                line: number,
                message: "key before any [section] header".to_string(),
            })?;
            if entries.iter().any(|e| e.section == section && e.key == key) {
                return Err(ConfigError::Syntax {
                    line: number,
                    message: format!("duplicate key `{section}.{key}`"),
                });
            }
            entries.push(Entry {
                section,
                key: key.to_string(),
                value: value.trim().to_string(),
            });
        }
        Ok(Config { entries })
    }

    /// Reads and parses a configuration file.
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Config::parse(&text)
    }

    /// Applies one `section.key=value` override, replacing an existing
    /// binding or appending a new one.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadOverride { spec: spec.to_string() };
        let (path, value) = spec.split_once('=').ok_or_else(bad)?;
        let (section, key) = path.trim().split_once('.').ok_or_else(bad)?;
        let (section, key, value) = (section.trim(), key.trim(), value.trim());
        if section.is_empty() || key.is_empty() || key.contains('.') {
            return Err(bad());
        }
        self.set(section, key, value);
        Ok(())
    }

    /// Sets a binding directly (convenience flags reduce to this).
    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        if let Some(entry) =
            self.entries.iter_mut().find(|e| e.section == section && e.key == key)
        {
            entry.value = value.to_string();
        } else {
            self.entries.push(Entry {
                section: section.to_string(),
                key: key.to_string(),
                value: value.to_string(),
            });
        }
    }

    /// Raw lookup.
    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.section == section && e.key == key)
            .map(|e| e.value.as_str())
    }

    /// Raw lookup that fails with the dotted path when absent.
    pub fn require(&self, section: &str, key: &str) -> Result<&str, ConfigError> {
        self.get(section, key).ok_or(ConfigError::MissingKey { path: format!("{section}.{key}") })
    }

    fn parse_value<T: FromStr>(
        section: &str,
        key: &str,
        value: &str,
        expected: &'static str,
    ) -> Result<T, ConfigError> {
        value.parse().map_err(|_| ConfigError::BadValue {
            path: format!("{section}.{key}"),
            value: value.to_string(),
            expected,
        })
    }

    /// Typed lookup with a default for absent keys.
    pub fn get_f64(&self, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(section, key) {
            Some(value) => Self::parse_value(section, key, value, "a real number"),
            None => Ok(default),
        }
    }

    /// Typed lookup that fails for absent keys.
    pub fn require_f64(&self, section: &str, key: &str) -> Result<f64, ConfigError> {
        Self::parse_value(section, key, self.require(section, key)?, "a real number")
    }

    pub fn get_usize(&self, section: &str, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.get(section, key) {
            Some(value) => Self::parse_value(section, key, value, "a nonnegative integer"),
            None => Ok(default),
        }
    }

    pub fn get_u64(&self, section: &str, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.get(section, key) {
            Some(value) => Self::parse_value(section, key, value, "a nonnegative integer"),
            None => Ok(default),
        }
    }

    pub fn get_bool(&self, section: &str, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(section, key) {
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(value) => Err(ConfigError::BadValue {
                path: format!("{section}.{key}"),
                value: value.to_string(),
                expected: "`true` or `false`",
            }),
            None => Ok(default),
        }
    }

    pub fn get_str<'a>(&'a self, section: &str, key: &str, default: &'a str) -> &'a str {
        self.get(section, key).unwrap_or(default)
    }

    /// Comma-separated list of reals, e.g. `x0 = -1,-0.5,-0.5236`.
    pub fn get_f64_list(
        &self,
        section: &str,
        key: &str,
        default: &[f64],
    ) -> Result<Vec<f64>, ConfigError> {
        match self.get(section, key) {
            Some(value) => value
                .split(',')
                .map(|part| Self::parse_value(section, key, part.trim(), "a list of reals"))
                .collect(),
            None => Ok(default.to_vec()),
        }
    }

    /// Comma-separated list of nonnegative integers, e.g. `sizes = 10,100`.
    pub fn get_usize_list(
        &self,
        section: &str,
        key: &str,
        default: &[usize],
    ) -> Result<Vec<usize>, ConfigError> {
        match self.get(section, key) {
            Some(value) => value
                .split(',')
                .map(|part| {
                    Self::parse_value(section, key, part.trim(), "a list of nonnegative integers")
                })
                .collect(),
            None => Ok(default.to_vec()),
        }
    }

    /// Comma-separated list of names, trimmed.
    pub fn get_str_list(&self, section: &str, key: &str, default: &[&str]) -> Vec<String> {
        match self.get(section, key) {
            Some(value) => value.split(',').map(|part| part.trim().to_string()).collect(),
            None => default.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Checks every binding against a schema of `(section, keys)` pairs and
    /// reports the first stray key, so typos fail before any work starts.
    pub fn validate_known(&self, schema: &[(&str, &[&str])]) -> Result<(), ConfigError> {
        for entry in &self.entries {
            let known = schema
                .iter()
                .find(|(section, _)| *section == entry.section)
                .is_some_and(|(_, keys)| keys.contains(&entry.key.as_str()));
            if !known {
                return Err(ConfigError::UnknownKey {
                    path: format!("{}.{}", entry.section, entry.key),
                });
            }
        }
        Ok(())
    }

    /// Canonical text form: `section.key = value` lines sorted by section
    /// then key, independent of declaration order.
    pub fn canonical(&self) -> String {
        let mut sorted: Vec<&Entry> = self.entries.iter().collect();
        sorted.sort_by(|a, b| (&a.section, &a.key).cmp(&(&b.section, &b.key)));
        let mut out = String::new();
        for entry in sorted {
            out.push_str(&format!("{}.{} = {}\n", entry.section, entry.key, entry.value));
        }
        out
    }

    /// FNV-1a hash of the canonical form, printed as 16 hex digits in
    /// provenance headers.
    pub fn hash(&self) -> u64 {
        fnv1a64(self.canonical().as_bytes())
    }
}
