use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use roughflow::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Lift,
    Solve,
    DecomposeLinear,
    Cascade,
    Factorize,
    GridDecompose,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Lift => "lift",
            Command::Solve => "solve",
            Command::DecomposeLinear => "decompose-linear",
            Command::Cascade => "cascade",
            Command::Factorize => "factorize",
            Command::GridDecompose => "grid-decompose",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub command: Command,
    #[serde(default)]
    pub inputs: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub parameters: BTreeMap<String, Value>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// A configuration problem, located in the config text when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub origin: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{l}: {}", self.origin, self.message),
            None => write!(f, "{}: {}", self.origin, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Where each parameter value came from, for error messages.
#[derive(Debug, Clone, Default)]
pub struct Source {
    file: String,
    text: String,
    overridden: BTreeMap<String, String>,
}

impl Source {
    fn locate(&self, key: &str) -> (String, Option<usize>) {
        if let Some(flag) = self.overridden.get(key) {
            return (flag.clone(), None);
        }
        let needle = format!("\"{key}\"");
        let line = self.text.lines().position(|l| l.contains(&needle)).map(|i| i + 1);
        (self.file.clone(), line)
    }

    pub fn error(&self, key: &str, message: impl Into<String>) -> ConfigError {
        let (origin, line) = self.locate(key);
        ConfigError {
            origin,
            line,
            message: message.into(),
        }
    }
}

/// Parse a job config. A report written by an earlier run is accepted too;
/// its `config` echo is used.
pub fn parse_config(text: &str, origin: &str) -> Result<(JobConfig, Source), ConfigError> {
    if let Ok(Value::Object(o)) = serde_json::from_str::<Value>(text) {
        if let (Some(echo), true) = (o.get("config"), o.contains_key("exit_code")) {
            let inner = serde_json::to_string_pretty(echo).expect("JSON value serializes");
            return parse_config(&inner, &format!("{origin} (config echo)"));
        }
    }
    let config: JobConfig = serde_json::from_str(text).map_err(|e| ConfigError {
        origin: origin.to_string(),
        line: Some(e.line()),
        message: format!("{e}"),
    })?;
    let source = Source {
        file: origin.to_string(),
        text: text.to_string(),
        overridden: BTreeMap::new(),
    };
    Ok((config, source))
}

pub fn load_config(path: &Path) -> Result<(JobConfig, Source), ConfigError> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        origin: origin.clone(),
        line: None,
        message: format!("cannot read config: {e}"),
    })?;
    parse_config(&text, &origin)
}

/// Apply a `key=value` override; the value is read as JSON when it parses,
/// otherwise as a string.
pub fn apply_override(config: &mut JobConfig, source: &mut Source, assignment: &str) -> Result<(), ConfigError> {
    let flag = format!("--set {assignment}");
    let (key, raw) = assignment.split_once('=').ok_or_else(|| ConfigError {
        origin: flag.clone(),
        line: None,
        message: "expected key=value".into(),
    })?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError {
            origin: flag,
            line: None,
            message: "empty parameter name".into(),
        });
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    config.parameters.insert(key.to_string(), value);
    source.overridden.insert(key.to_string(), flag);
    Ok(())
}

pub fn set_seed(config: &mut JobConfig, source: &mut Source, seed: u64) {
    config.parameters.insert("seed".into(), Value::from(seed));
    source.overridden.insert("seed".into(), "--seed".into());
}

/// Typed, range-checked access to `parameters`.
pub struct Params<'a> {
    map: &'a BTreeMap<String, Value>,
    source: &'a Source,
}

impl<'a> Params<'a> {
    pub fn new(map: &'a BTreeMap<String, Value>, source: &'a Source) -> Self {
        Self { map, source }
    }

    pub fn error(&self, key: &str, message: impl Into<String>) -> ConfigError {
        self.source.error(key, message)
    }

    pub fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| self.error(key, format!("parameter `{key}` must be a finite number, got {v}"))),
        }
    }

    pub fn positive(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let x = self.f64(key, default)?;
        if x > 0.0 {
            Ok(x)
        } else {
            Err(self.error(key, format!("parameter `{key}` must be positive, got {x}")))
        }
    }

    pub fn usize(&self, key: &str, default: usize, min: usize, max: usize) -> Result<usize, ConfigError> {
        let n = match self.map.get(key) {
            None => default,
            Some(v) => v
                .as_u64()
                .map(|n| n as usize)
                .ok_or_else(|| self.error(key, format!("parameter `{key}` must be a non-negative integer, got {v}")))?,
        };
        if n < min || n > max {
            return Err(self.error(key, format!("parameter `{key}` must lie in [{min}, {max}], got {n}")));
        }
        Ok(n)
    }

    pub fn u64(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .ok_or_else(|| self.error(key, format!("parameter `{key}` must be a non-negative integer, got {v}"))),
        }
    }

    pub fn bool(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_bool()
                .ok_or_else(|| self.error(key, format!("parameter `{key}` must be true or false, got {v}"))),
        }
    }

    pub fn choice(&self, key: &str, default: &str, allowed: &[&str]) -> Result<String, ConfigError> {
        let s = match self.map.get(key) {
            None => default.to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(v) => return Err(self.error(key, format!("parameter `{key}` must be a string, got {v}"))),
        };
        if allowed.contains(&s.as_str()) {
            Ok(s)
        } else {
            Err(self.error(key, format!("parameter `{key}` must be one of {allowed:?}, got {s:?}")))
        }
    }

    pub fn vector(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        let Some(v) = self.map.get(key) else { return Ok(None) };
        let bad = || self.error(key, format!("parameter `{key}` must be an array of numbers"));
        let xs = v.as_array().ok_or_else(bad)?;
        xs.iter().map(|x| x.as_f64().ok_or_else(bad)).collect::<Result<Vec<_>, _>>().map(Some)
    }

    /// A matrix given as an array of rows.
    pub fn matrix(&self, key: &str) -> Result<Option<DMatrix<f64>>, ConfigError> {
        let Some(v) = self.map.get(key) else { return Ok(None) };
        parse_matrix(v).map(Some).map_err(|m| self.error(key, format!("parameter `{key}`: {m}")))
    }

    /// A list of matrices, or a single matrix.
    pub fn matrices(&self, key: &str) -> Result<Option<Vec<DMatrix<f64>>>, ConfigError> {
        let Some(v) = self.map.get(key) else { return Ok(None) };
        let err = |m: String| self.error(key, format!("parameter `{key}`: {m}"));
        let arr = v.as_array().ok_or_else(|| err("expected an array".into()))?;
        let nested = arr.first().and_then(|r| r.as_array()).and_then(|r| r.first()).is_some_and(Value::is_array);
        if nested {
            arr.iter().map(|m| parse_matrix(m).map_err(err)).collect::<Result<Vec<_>, _>>().map(Some)
        } else {
            parse_matrix(v).map(|m| Some(vec![m])).map_err(err)
        }
    }
}

fn parse_matrix(v: &Value) -> Result<DMatrix<f64>, String> {
    let rows = v.as_array().ok_or("expected an array of rows")?;
    if rows.is_empty() {
        return Err("matrix has no rows".into());
    }
    let parsed: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            r.as_array()
                .ok_or("each row must be an array".to_string())?
                .iter()
                .map(|x| x.as_f64().ok_or("entries must be numbers".to_string()))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let cols = parsed[0].len();
    if cols == 0 || parsed.iter().any(|r| r.len() != cols) {
        return Err("rows must be non-empty and of equal length".into());
    }
    Ok(DMatrix::from_fn(parsed.len(), cols, |i, j| parsed[i][j]))
}
