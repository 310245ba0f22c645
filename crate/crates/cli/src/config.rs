//! Effective configuration: flags over config file over defaults.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use hamshade::hamsys::{HamiltonianSystem, SystemDef};

pub const OUTPUT_DIR_ENV: &str = "HAMSHADE_OUTPUT_DIR";
pub const FORMAT_VERSION: u32 = 1;

/// Parsed config document: shared keys plus one optional section per command.
#[derive(Debug, Default)]
pub struct ConfigFile {
    shared: Map<String, Value>,
    sections: Map<String, Value>,
}

const SHARED_KEYS: [&str; 3] = ["system", "output_dir", "jobs"];

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let Value::Object(map) = value else { bail!("config {} must hold a JSON object", path.display()) };
        let mut out = Self::default();
        for (k, v) in map {
            if SHARED_KEYS.contains(&k.as_str()) {
                out.shared.insert(k, v);
            } else {
                out.sections.insert(k, v);
            }
        }
        Ok(out)
    }

    pub fn shared(&self, key: &str) -> Option<&Value> {
        self.shared.get(key)
    }

    pub fn section(&self, command: &str) -> Option<&Value> {
        self.sections.get(command)
    }
}

/// Overlays the config section and then the flags onto `P::default()`.
/// Flags serialize only the values actually given.
pub fn merge<P, F>(flags: &F, section: Option<&Value>) -> anyhow::Result<P>
where
    P: Serialize + DeserializeOwned + Default,
    F: Serialize,
{
    let mut value = serde_json::to_value(P::default())?;
    let target = value.as_object_mut().ok_or_else(|| anyhow!("parameters must serialize to an object"))?;
    if let Some(section) = section {
        let Value::Object(map) = section else { bail!("config sections must be JSON objects") };
        for (k, v) in map {
            target.insert(k.clone(), v.clone());
        }
    }
    if let Value::Object(map) = serde_json::to_value(flags)? {
        for (k, v) in map {
            if !v.is_null() {
                target.insert(k, v);
            }
        }
    }
    serde_json::from_value(value).context("invalid parameters")
}

/// `builtin:NAME`, a bare builtin name, or a path to a system definition document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Named(String),
    Inline(SystemDef),
}

pub fn load_system(spec: &SystemSpec) -> anyhow::Result<(HamiltonianSystem, SystemDef)> {
    let def = match spec {
        SystemSpec::Inline(def) => def.clone(),
        SystemSpec::Named(s) => match s.parse::<hamshade::hamsys::Builtin>() {
            Ok(b) => SystemDef::builtin(b),
            Err(_) if s.starts_with("builtin:") => bail!("unknown builtin system {s:?}"),
            Err(_) => {
                let text = std::fs::read_to_string(s).with_context(|| format!("reading system document {s}"))?;
                serde_json::from_str(&text).with_context(|| format!("parsing system document {s}"))?
            }
        },
    };
    let sys = HamiltonianSystem::from_def(&def)?;
    Ok((sys, def))
}

pub fn resolve_output_dir(flag: Option<&Path>, file: &ConfigFile) -> anyhow::Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.to_path_buf());
    }
    if let Some(v) = file.shared("output_dir") {
        return v.as_str().map(PathBuf::from).ok_or_else(|| anyhow!("output_dir must be a string"));
    }
    Ok(std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")))
}

pub fn resolve_jobs(flag: Option<usize>, file: &ConfigFile) -> anyhow::Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match file.shared("jobs") {
        None => Ok(None),
        Some(v) => v.as_u64().map(|j| Some(j as usize)).ok_or_else(|| anyhow!("jobs must be a positive integer")),
    }
}

pub fn resolve_system(flag: Option<&str>, file: &ConfigFile) -> anyhow::Result<Option<SystemSpec>> {
    if let Some(s) = flag {
        return Ok(Some(SystemSpec::Named(s.to_string())));
    }
    file.shared("system").map(|v| serde_json::from_value(v.clone()).context("invalid system entry")).transpose()
}
