//! Layered run configuration: defaults, then a TOML file, then flags.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::Failure;

fn drop_nulls(v: serde_json::Value) -> Option<serde_json::Value> {
    match v {
        serde_json::Value::Null => None,
        serde_json::Value::Object(m) => Some(serde_json::Value::Object(
            m.into_iter().filter_map(|(k, v)| drop_nulls(v).map(|v| (k, v))).collect(),
        )),
        other => Some(other),
    }
}

/// Resolves `R` from its defaults, the optional config file and the flags
/// that were actually given.
pub fn resolve<F: Serialize, R: DeserializeOwned>(file: Option<&Path>, flags: &F) -> Result<R, Failure> {
    let mut table: toml::Table = match file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Run(format!("reading {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Failure::Usage(format!("config file {}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    let given = serde_json::to_value(flags).map_err(|e| Failure::Run(e.to_string()))?;
    if let Some(given) = drop_nulls(given) {
        let given = toml::Value::try_from(given).map_err(|e| Failure::Run(e.to_string()))?;
        if let toml::Value::Table(t) = given {
            table.extend(t);
        }
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Failure::Usage(format!("invalid configuration: {e}")))
}

/// Writes the resolved configuration as `config.toml` in `dir`.
pub fn echo<R: Serialize>(dir: &Path, cfg: &R) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Run(format!("creating {}: {e}", dir.display())))?;
    let text = toml::to_string(cfg).map_err(|e| Failure::Run(e.to_string()))?;
    fs::write(dir.join("config.toml"), text).map_err(|e| Failure::Run(e.to_string()))
}
