//! Layered run configuration: JSON file, then `HB0_SECTION__KEY` environment
//! variables, then command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use hb0::episodes::ReachConfig;
use hb0::runtime::{ClientConfig, ServerConfig};
use hb0::simplant::BenchGrid;
use hb0::training::ToyTrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const CONFIG_VERSION: u32 = 1;
const ENV_PREFIX: &str = "HB0_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    pub threshold_px: f64,
    pub max_outside_fraction: f64,
    pub gap_factor: f64,
}

impl Default for ValidationSection {
    fn default() -> Self {
        Self {
            threshold_px: hb0::projection::DEFAULT_THRESHOLD_PX,
            max_outside_fraction: hb0::projection::DEFAULT_MAX_OUTSIDE,
            gap_factor: hb0::episodes::DEFAULT_GAP_FACTOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub data: ReachConfig,
    pub train: ToyTrainConfig,
    pub server: ServerConfig,
    pub client: ClientConfig,
    pub bench: BenchGrid,
    pub validation: ValidationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            data: ReachConfig {
                episodes: 2000,
                ..ReachConfig::default()
            },
            train: ToyTrainConfig::default(),
            server: ServerConfig::default(),
            client: ClientConfig::default(),
            bench: BenchGrid::default(),
            validation: ValidationSection::default(),
        }
    }
}

/// Reads `file` (if any) and applies environment overrides from `vars`.
pub fn load(file: Option<&Path>, vars: impl Iterator<Item = (String, String)>) -> Result<RunConfig> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("plain data");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let user: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(v) = user.get("version") {
            if v.as_u64() != Some(CONFIG_VERSION as u64) {
                bail!("config version {v} not supported (expected {CONFIG_VERSION})");
            }
        }
        merge(&mut value, user);
    }
    for (key, raw) in vars {
        let Some(rest) = key.strip_prefix(ENV_PREFIX) else { continue };
        if rest == "LOG" {
            continue;
        }
        let path: Vec<String> = rest.split("__").map(|s| s.to_ascii_lowercase()).collect();
        let parsed = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        set_path(&mut value, &path, parsed).with_context(|| format!("environment variable {key}"))?;
    }
    let de = value;
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("invalid configuration at `{path}`: {}", e.into_inner())
    })?;
    Ok(cfg)
}

/// Recursive object merge; non-object values replace.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(value: &mut Value, path: &[String], new: Value) -> Result<()> {
    let Some((last, parents)) = path.split_last() else { bail!("empty key") };
    let mut cur = value;
    for p in parents {
        cur = match cur {
            Value::Object(m) => m.entry(p.clone()).or_insert_with(|| Value::Object(Default::default())),
            _ => bail!("`{p}` is not a section"),
        };
    }
    match cur {
        Value::Object(m) => {
            m.insert(last.clone(), new);
            Ok(())
        }
        _ => bail!("cannot set `{last}` inside a non-object"),
    }
}
