use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// A dimension given either as a number or as `auto`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    Fixed(usize),
    Auto,
}

impl Serialize for Dim {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Dim::Fixed(n) => s.serialize_u64(*n as u64),
            Dim::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for Dim {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::Number(n) => n
                .as_u64()
                .map(|v| Dim::Fixed(v as usize))
                .ok_or_else(|| serde::de::Error::custom(format!("expected a nonnegative integer, got {n}"))),
            Value::String(s) => s.parse().map_err(serde::de::Error::custom),
            other => Err(serde::de::Error::custom(format!(
                "expected a number or \"auto\", got {other}"
            ))),
        }
    }
}

impl FromStr for Dim {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Dim::Auto);
        }
        s.parse()
            .map(Dim::Fixed)
            .map_err(|_| format!("expected a positive integer or `auto`, got {s:?}"))
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dim::Fixed(n) => write!(f, "{n}"),
            Dim::Auto => f.write_str("auto"),
        }
    }
}

/// Overlay the flags that were given on top of the config file. Keys in the file that
/// `T` does not serialize are rejected.
pub fn merge<T: Serialize + DeserializeOwned + Default>(
    flags: &T,
    file: Option<&Path>,
) -> Result<T, CliError> {
    let mut base = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))?;
            let Value::Object(map) = &value else {
                return Err(CliError::new(
                    "config",
                    format!("{}: expected a JSON object", path.display()),
                ));
            };
            let known = serde_json::to_value(T::default())
                .map_err(|e| CliError::new("config", e.to_string()))?;
            if let Some(key) = map.keys().find(|k| known.get(k.as_str()).is_none()) {
                return Err(CliError::new(
                    "config",
                    format!("{}: unknown key {key:?}", path.display()),
                ));
            }
            value
        }
        None => Value::Object(Default::default()),
    };
    let overlay = serde_json::to_value(flags).map_err(|e| CliError::new("config", e.to_string()))?;
    if let (Value::Object(base), Value::Object(overlay)) = (&mut base, overlay) {
        for (k, v) in overlay {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    serde_json::from_value(base).map_err(|e| CliError::new("config", e.to_string()))
}

/// `dir/stem.suffix` next to `path`, e.g. `out/data.csv` → `out/data.truth.json`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::new("json", e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

/// `--parallel`, else `FAFPCA_THREADS`, else every core.
pub fn configure_threads(parallel: Option<usize>) -> Result<(), CliError> {
    let threads = match parallel {
        Some(n) => Some(n),
        None => match std::env::var("FAFPCA_THREADS") {
            Ok(v) if !v.trim().is_empty() => Some(v.trim().parse().map_err(|_| {
                CliError::new("config", format!("FAFPCA_THREADS must be a positive integer, got {v:?}"))
            })?),
            _ => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::new("config", "thread count must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::new("config", e.to_string()))?;
    }
    Ok(())
}
