//! Config loading: JSON file, dotted-key `--set` overrides, seed resolution,
//! and the banned-token list.
//!
//! Override precedence, highest first: `--set` flags and `--seed`, then the
//! config file, then the `PEZLAB_SEED` environment variable.

use std::path::Path;

use pezlab_core::harness::TaskName;
use pezlab_core::ExperimentConfig;
use serde_json::Value;

/// Error that must map to exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub const SEED_ENV_VAR: &str = "PEZLAB_SEED";

/// How `--seed` and `PEZLAB_SEED` land in the config.
pub enum SeedTarget {
    /// Replace the experiment's base seed (`compare`).
    BaseSeed,
    /// Replace the seed list with a single label (single-run subcommands).
    SeedList,
}

pub struct ConfigRequest<'a> {
    pub path: &'a Path,
    pub overrides: &'a [String],
    pub seed: Option<u64>,
    pub seed_target: SeedTarget,
    /// Task the subcommand implies; a conflicting `task` key is an error.
    pub expected_task: Option<TaskName>,
    pub banned_file: Option<&'a Path>,
}

pub fn load_config(request: &ConfigRequest<'_>) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(request.path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", request.path.display())))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| ConfigError(format!("{} is not valid json: {e}", request.path.display())))?;
    if !value.is_object() {
        return Err(ConfigError(format!(
            "{} must hold a json object",
            request.path.display()
        )));
    }

    for entry in request.overrides {
        let (key, raw) = entry.split_once('=').ok_or_else(|| {
            ConfigError(format!(
                "override {entry:?} is not of the form key.path=value"
            ))
        })?;
        apply_override(&mut value, key, raw)?;
    }

    apply_task(&mut value, request.expected_task)?;
    apply_seed(&mut value, request.seed, &request.seed_target)?;

    let mut cfg: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| ConfigError(format!("invalid config: {e}")))?;

    if let Some(banned) = request.banned_file {
        let text = std::fs::read_to_string(banned)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", banned.display())))?;
        cfg.banned_tokens.extend(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from),
        );
    }

    cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok(cfg)
}

/// Sets a dotted-path key. The value is parsed as JSON when possible and
/// falls back to a plain string, so `--set opt.gamma=0.1` and
/// `--set out=run.csv` both work.
fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<(), ConfigError> {
    let parsed: Value =
        serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let segments: Vec<&str> = key.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(ConfigError(format!(
            "override key {key:?} has an empty segment"
        )));
    }
    let mut cursor = root;
    for (i, segment) in segments.iter().enumerate() {
        let map = cursor
            .as_object_mut()
            .ok_or_else(|| ConfigError(format!("override {key:?} descends into a non-object")))?;
        if i == segments.len() - 1 {
            map.insert((*segment).to_string(), parsed);
            return Ok(());
        }
        cursor = map
            .entry((*segment).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("segments are non-empty");
}

fn apply_task(value: &mut Value, expected: Option<TaskName>) -> Result<(), ConfigError> {
    let Some(expected) = expected else {
        return Ok(());
    };
    let name = serde_json::to_value(expected).expect("task names serialize");
    let map = value.as_object_mut().expect("validated object");
    match map.get("task") {
        None => {
            map.insert("task".into(), name);
        }
        Some(existing) if *existing == name => {}
        Some(existing) => {
            return Err(ConfigError(format!(
                "config task {existing} does not match this subcommand (expected {name})"
            )));
        }
    }
    Ok(())
}

fn apply_seed(
    value: &mut Value,
    flag: Option<u64>,
    target: &SeedTarget,
) -> Result<(), ConfigError> {
    let map = value.as_object_mut().expect("validated object");
    let key = match target {
        SeedTarget::BaseSeed => "base_seed",
        SeedTarget::SeedList => "seeds",
    };
    let wrap = |seed: u64| match target {
        SeedTarget::BaseSeed => Value::from(seed),
        SeedTarget::SeedList => Value::from(vec![seed]),
    };
    if let Some(seed) = flag {
        map.insert(key.into(), wrap(seed));
        return Ok(());
    }
    if map.contains_key(key) {
        return Ok(());
    }
    if let Ok(text) = std::env::var(SEED_ENV_VAR) {
        let seed: u64 = text
            .parse()
            .map_err(|_| ConfigError(format!("{SEED_ENV_VAR}={text:?} is not a valid seed")))?;
        map.insert(key.into(), wrap(seed));
    }
    Ok(())
}
