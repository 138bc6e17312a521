//! Effective configuration: built-in defaults, then the `--config` file, then
//! command-line flags.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const SEED_ENV: &str = "STARLAB_SEED";

/// Seed used when neither a flag nor the config file sets one.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .with_context(|| format!("{SEED_ENV}={s:?} is not an unsigned integer")),
        Err(_) => Ok(None),
    }
}

/// Reads a config file. A run manifest is accepted too, in which case its
/// config echo is used (the command must match).
pub fn read_file(path: &Path, command: &str) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let Value::Object(mut map) = value else {
        bail!("{} must hold a JSON object", path.display());
    };
    if let (Some(Value::String(cmd)), Some(Value::Object(_))) =
        (map.get("command"), map.get("config"))
    {
        if cmd != command {
            bail!(
                "{} is a manifest for `{cmd}`, not `{command}`",
                path.display()
            );
        }
        let Some(Value::Object(config)) = map.remove("config") else {
            unreachable!()
        };
        return Ok(config);
    }
    Ok(map)
}

/// Overlays `file` keys on `defaults`. Unknown keys are rejected.
pub fn merge<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<Map<String, Value>>,
) -> Result<T> {
    let Value::Object(mut base) = serde_json::to_value(defaults)? else {
        bail!("config defaults must serialize to an object");
    };
    for (key, value) in file.unwrap_or_default() {
        if !base.contains_key(&key) {
            let known: Vec<&str> = base.keys().map(String::as_str).collect();
            bail!(
                "unknown config key `{key}` (expected one of: {})",
                known.join(", ")
            );
        }
        base.insert(key, value);
    }
    serde_json::from_value(Value::Object(base)).context("invalid config")
}

pub fn load<T: Serialize + DeserializeOwned>(
    defaults: &T,
    path: Option<&Path>,
    command: &str,
) -> Result<T> {
    let file = path.map(|p| read_file(p, command)).transpose()?;
    merge(defaults, file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Cfg {
        m: usize,
        delta0: f64,
    }

    fn map(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn file_overrides_defaults() {
        let d = Cfg { m: 2, delta0: 0.1 };
        let c = merge(&d, Some(map(serde_json::json!({"delta0": 0.3})))).unwrap();
        assert_eq!(c, Cfg { m: 2, delta0: 0.3 });
        assert!(merge(&d, Some(map(serde_json::json!({"M": 3})))).is_err());
        assert!(merge(&d, Some(map(serde_json::json!({"m": "x"})))).is_err());
    }

    #[test]
    fn manifests_are_configs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.json");
        fs::write(&p, r#"{"command":"exact","config":{"m":3},"seed":null}"#).unwrap();
        assert_eq!(
            read_file(&p, "exact").unwrap(),
            map(serde_json::json!({"m": 3}))
        );
        assert!(read_file(&p, "simulate").is_err());
    }
}
