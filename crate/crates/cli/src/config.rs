//! Flat `key = value` config files.
//!
//! Values are typed on read: integers, reals (`1e6` included), `Inf`,
//! booleans, bare strings, and comma-separated lists (optionally wrapped
//! in brackets). `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use trajsim_core::fmt_real;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigValue {
    Int(i64),
    Real(f64),
    Inf,
    Bool(bool),
    Str(String),
    List(Vec<ConfigValue>),
}

impl ConfigValue {
    /// Parses one value; a top-level comma makes a list.
    pub fn parse(text: &str) -> Self {
        let t = text.trim();
        let inner = t.strip_prefix('[').and_then(|s| s.strip_suffix(']'));
        if inner.is_some() || t.contains(',') {
            let body = inner.unwrap_or(t);
            return ConfigValue::List(
                body.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(Self::scalar)
                    .collect(),
            );
        }
        Self::scalar(t)
    }

    fn scalar(t: &str) -> Self {
        if let Ok(i) = t.parse::<i64>() {
            return ConfigValue::Int(i);
        }
        match t {
            "Inf" | "inf" | "+Inf" => return ConfigValue::Inf,
            "true" => return ConfigValue::Bool(true),
            "false" => return ConfigValue::Bool(false),
            _ => {}
        }
        match t.parse::<f64>() {
            Ok(x) if x.is_finite() => ConfigValue::Real(x),
            _ => ConfigValue::Str(t.to_owned()),
        }
    }

    /// The list items, or the value itself as a one-item list.
    pub fn items(&self) -> Vec<ConfigValue> {
        match self {
            ConfigValue::List(v) => v.clone(),
            other => vec![other.clone()],
        }
    }

    pub fn is_list(&self) -> bool {
        matches!(self, ConfigValue::List(_))
    }
}

impl fmt::Display for ConfigValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigValue::Int(i) => write!(f, "{i}"),
            ConfigValue::Real(x) => f.write_str(&fmt_real(*x)),
            ConfigValue::Inf => f.write_str("Inf"),
            ConfigValue::Bool(b) => write!(f, "{b}"),
            ConfigValue::Str(s) => f.write_str(s),
            ConfigValue::List(v) => {
                let parts: Vec<String> = v.iter().map(ToString::to_string).collect();
                write!(f, "[{}]", parts.join(", "))
            }
        }
    }
}

fn valid_key(k: &str) -> bool {
    !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

/// Parses config text into ordered entries. `origin` names the source in
/// error messages.
pub fn parse_config(text: &str, origin: &str) -> Result<Vec<(String, ConfigValue)>, CliError> {
    let mut out: Vec<(String, ConfigValue)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("{origin}:{}: expected `key = value`", n + 1)));
        };
        let key = k.trim();
        if !valid_key(key) {
            return Err(CliError::Usage(format!("{origin}:{}: invalid key `{key}`", n + 1)));
        }
        if out.iter().any(|(existing, _)| existing == key) {
            return Err(CliError::Usage(format!("{origin}:{}: duplicate key `{key}`", n + 1)));
        }
        out.push((key.to_owned(), ConfigValue::parse(v)));
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<Vec<(String, ConfigValue)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, &path.display().to_string())
}

/// Renders entries in the same format `parse_config` reads.
pub fn render(entries: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in entries {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(v);
        s.push('\n');
    }
    s
}

/// Key/value parameters consumed by the scenario builders. Every key has to
/// be taken; leftovers are reported as unknown.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    map: BTreeMap<String, ConfigValue>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: ConfigValue) {
        self.map.insert(key.into(), value);
    }

    pub fn get(&self, key: &str) -> Option<&ConfigValue> {
        self.map.get(key)
    }

    pub fn remove(&mut self, key: &str) -> Option<ConfigValue> {
        self.map.remove(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    fn bad(key: &str, v: &ConfigValue, want: &str) -> CliError {
        CliError::Usage(format!("`{key}` expects {want}, got `{v}`"))
    }

    pub fn take_f64(&mut self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.map.remove(key) {
            None => Ok(default),
            Some(ConfigValue::Int(i)) => Ok(i as f64),
            Some(ConfigValue::Real(x)) => Ok(x),
            Some(ConfigValue::Inf) => Ok(f64::INFINITY),
            Some(v) => Err(Self::bad(key, &v, "a number")),
        }
    }

    pub fn take_u64(&mut self, key: &str, default: u64) -> Result<u64, CliError> {
        match self.map.remove(key) {
            None => Ok(default),
            Some(ConfigValue::Int(i)) if i >= 0 => Ok(i as u64),
            Some(ConfigValue::Real(x)) if x >= 0.0 && x.fract() == 0.0 && x < 1.8e19 => Ok(x as u64),
            Some(v) => Err(Self::bad(key, &v, "a non-negative integer")),
        }
    }

    pub fn take_usize(&mut self, key: &str, default: usize) -> Result<usize, CliError> {
        self.take_u64(key, default as u64).map(|v| v as usize)
    }

    pub fn take_bool(&mut self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.map.remove(key) {
            None => Ok(default),
            Some(ConfigValue::Bool(b)) => Ok(b),
            Some(ConfigValue::Int(0)) => Ok(false),
            Some(ConfigValue::Int(1)) => Ok(true),
            Some(v) => Err(Self::bad(key, &v, "true or false")),
        }
    }

    pub fn take_string(&mut self, key: &str, default: &str) -> Result<String, CliError> {
        match self.map.remove(key) {
            None => Ok(default.to_owned()),
            Some(ConfigValue::Str(s)) => Ok(s),
            Some(v) => Err(Self::bad(key, &v, "a name")),
        }
    }

    /// A byte limit where `Inf` and `0` both mean unlimited.
    pub fn take_limit(&mut self, key: &str, default: Option<u64>) -> Result<Option<u64>, CliError> {
        match self.map.get(key) {
            None => Ok(default),
            Some(ConfigValue::Inf) => {
                self.map.remove(key);
                Ok(None)
            }
            Some(_) => self.take_u64(key, 0).map(|v| (v > 0).then_some(v)),
        }
    }

    /// Errors if any key was not consumed.
    pub fn finish(self, scenario: &str) -> Result<(), CliError> {
        if self.map.is_empty() {
            return Ok(());
        }
        let keys: Vec<&str> = self.map.keys().map(String::as_str).collect();
        Err(CliError::Usage(format!("unknown {scenario} parameter(s): {}", keys.join(", "))))
    }
}
