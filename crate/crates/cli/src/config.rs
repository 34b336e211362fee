//! Resolved run configuration.
//!
//! Layers, lowest to highest: built-in defaults, `COMPCOND_<KEY>`
//! environment variables, the `--config` TOML file, command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use compcond::{KernelSchedule, SlicParams};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const ENV_PREFIX: &str = "COMPCOND_";

/// Keys whose values are strings (everything else is parsed as a number).
const STRING_KEYS: &[&str] = &["llm", "lvlm_url", "lvlm_model", "exemplar_mode"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Fixed structure window; overrides the schedule when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
    pub k_step: usize,
    pub slic_region: usize,
    pub slic_iters: usize,
    pub compactness: f64,
    /// Color pre-blur window; 0 disables the pre-blur.
    pub blur_k: usize,
    pub workers: usize,
    pub candidates: usize,
    pub retries: usize,
    pub exemplar_mode: String,
    /// `stub:<fixture.json>` or `http`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lvlm_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lvlm_model: Option<String>,
    pub lvlm_max_in_flight: usize,
    pub lvlm_timeout_s: u64,
}

impl Default for Config {
    fn default() -> Self {
        let schedule = KernelSchedule::default();
        let slic = SlicParams::default();
        Self {
            seed: 0,
            k: None,
            k_min: schedule.min_k,
            k_max: schedule.max_k,
            k_step: schedule.step,
            slic_region: slic.region_size,
            slic_iters: slic.iterations,
            compactness: slic.compactness,
            blur_k: slic.blur_k.unwrap_or(0),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            candidates: compcond::planner::DEFAULT_CANDIDATES,
            retries: 2,
            exemplar_mode: "text".into(),
            llm: None,
            lvlm_url: None,
            lvlm_model: None,
            lvlm_max_in_flight: 4,
            lvlm_timeout_s: 120,
        }
    }
}

impl Config {
    pub fn schedule(&self) -> Result<KernelSchedule> {
        let s = match self.k {
            Some(k) => KernelSchedule::fixed(k),
            None => KernelSchedule::new(self.k_min, self.k_max, self.k_step),
        };
        Ok(s?)
    }

    pub fn slic(&self) -> Result<SlicParams> {
        let p = SlicParams {
            region_size: self.slic_region,
            iterations: self.slic_iters,
            compactness: self.compactness,
            blur_k: (self.blur_k != 0).then_some(self.blur_k),
            ..SlicParams::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Wrong use of the command line or config file (exit status 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: String) -> anyhow::Error {
    UsageError(msg).into()
}

fn known_keys() -> Vec<String> {
    // Optional keys are absent from the serialized defaults.
    let mut keys: Vec<String> = match serde_json::to_value(Config::default()) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => unreachable!("config is a struct"),
    };
    keys.extend(["k", "llm", "lvlm_url", "lvlm_model"].map(String::from));
    keys
}

fn parse_env_value(key: &str, raw: &str) -> Result<Value> {
    if STRING_KEYS.contains(&key) {
        return Ok(Value::String(raw.to_string()));
    }
    serde_json::from_str::<Value>(raw.trim())
        .ok()
        .filter(Value::is_number)
        .with_context(|| format!("{ENV_PREFIX}{}={raw:?} is not a number", key.to_uppercase()))
}

/// Values from `COMPCOND_<KEY>` variables, read through `lookup`.
pub fn env_layer(lookup: impl Fn(&str) -> Option<String>) -> Result<Map<String, Value>> {
    let mut out = Map::new();
    for key in known_keys() {
        let var = format!("{ENV_PREFIX}{}", key.to_uppercase());
        if let Some(raw) = lookup(&var).filter(|v| !v.is_empty()) {
            out.insert(key.clone(), parse_env_value(&key, &raw).map_err(|e| usage(e.to_string()))?);
        }
    }
    Ok(out)
}

pub fn file_layer(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let known = known_keys();
    if let Some(bad) = table.keys().find(|k| !known.contains(k)) {
        return Err(usage(format!("config {}: unknown key `{bad}`", path.display())));
    }
    match serde_json::to_value(table)? {
        Value::Object(m) => Ok(m),
        _ => unreachable!("a TOML table is an object"),
    }
}

/// Applies `layers` (lowest precedence first) over the defaults.
pub fn resolve(layers: &[Map<String, Value>]) -> Result<Config> {
    let Value::Object(mut merged) = serde_json::to_value(Config::default())? else {
        unreachable!("config is a struct")
    };
    for layer in layers {
        for (k, v) in layer {
            merged.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| usage(format!("invalid configuration: {e}")))
}

/// Fails if `blur_k` or the schedule are unusable, with the library's message.
pub fn check(cfg: &Config) -> Result<()> {
    if cfg.workers == 0 {
        bail!("workers must be at least 1");
    }
    cfg.schedule()?;
    cfg.slic()?;
    Ok(())
}
