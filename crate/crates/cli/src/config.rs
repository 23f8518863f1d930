use std::path::{Path, PathBuf};

use handforge::fitter::{FitConfig, RigPair};
use handforge::hand_model::{mirror_rig, test_rig, HandRig, HandType};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const RIG_DIR_VAR: &str = "HANDFORGE_RIG_DIR";

/// Everything a run reads from its config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: handforge::scene_synth::SynthConfig,
    pub fit: FitConfig,
}

/// A resolved config and where its seed came from.
pub struct Resolved {
    pub config: RunConfig,
    pub seed: u64,
    pub seed_source: &'static str,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {}", e.message())))?;
        cfg.synth.validate()?;
        cfg.fit.validate()?;
        Ok(cfg)
    }

    /// Flag beats file beats default.
    pub fn resolve(path: Option<&Path>, seed_flag: Option<u64>) -> Result<Resolved, CliError> {
        let (mut config, file_seed) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                let cfg = Self::parse(&text)?;
                let table: toml::Table = toml::from_str(&text).map_err(|e| CliError::Usage(e.to_string()))?;
                let has_seed = table
                    .get("fit")
                    .and_then(|f| f.as_table())
                    .is_some_and(|f| f.contains_key("seed"));
                let seed = has_seed.then_some(cfg.fit.seed);
                (cfg, seed)
            }
            None => (RunConfig::default(), None),
        };
        let (seed, seed_source) = match (seed_flag, file_seed) {
            (Some(s), _) => (s, "flag"),
            (None, Some(s)) => (s, "config"),
            (None, None) => (config.fit.seed, "default"),
        };
        config.fit.seed = seed;
        Ok(Resolved {
            config,
            seed,
            seed_source,
        })
    }

    /// SHA-256 of the canonical JSON form: object keys sorted, no whitespace.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let text = serde_json::to_string(&canonical(value)).expect("json value serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn canonical(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, canonical(v))).collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonical).collect()),
        other => other,
    }
}

/// A path as given, or else looked up under `HANDFORGE_RIG_DIR`.
fn find_rig(given: &Path) -> Result<PathBuf, CliError> {
    if given.is_file() {
        return Ok(given.to_path_buf());
    }
    if given.is_relative() {
        if let Some(dir) = std::env::var_os(RIG_DIR_VAR) {
            let p = Path::new(&dir).join(given);
            if p.is_file() {
                return Ok(p);
            }
        }
    }
    Err(CliError::Usage(format!("rig not found: {}", given.display())))
}

pub struct Rigs {
    pub pair: RigPair,
    /// Where the right-hand rig came from, for the manifest.
    pub source: String,
}

fn load(path: &Path, checked: bool) -> Result<HandRig, CliError> {
    let file = HandRig::read_file(path)?;
    Ok(if checked {
        HandRig::from_file(file)?
    } else {
        HandRig::from_file_unchecked(file)?
    })
}

/// Right-hand rig from `--rig`, then `right.json` in the rig directory, then
/// the built-in test rig. The left rig is `--left-rig` or the mirror image.
pub fn rigs(right: Option<&Path>, left: Option<&Path>) -> Result<Rigs, CliError> {
    let from_dir = || {
        let dir = std::env::var_os(RIG_DIR_VAR)?;
        let p = Path::new(&dir).join("right.json");
        p.is_file().then_some(p)
    };
    let (rig, source) = match right.map(find_rig).transpose()?.or_else(from_dir) {
        Some(p) => (load(&p, true)?, p.display().to_string()),
        None => (test_rig(), "builtin".to_string()),
    };
    if rig.hand_type() != HandType::Right {
        return Err(CliError::Usage(format!("{source} is not a right-hand rig")));
    }
    let left = match left {
        Some(p) => {
            let l = load(&find_rig(p)?, true)?;
            if l.hand_type() != HandType::Left {
                return Err(CliError::Usage(format!("{} is not a left-hand rig", p.display())));
            }
            l
        }
        None => mirror_rig(&rig),
    };
    Ok(Rigs {
        pair: RigPair { left, right: rig },
        source,
    })
}

/// Rig for the self-check: loaded without validation so broken invariants
/// show up in the report rather than as a load error.
pub fn unchecked_rig(path: Option<&Path>) -> Result<(HandRig, String), CliError> {
    match path {
        Some(p) => {
            let p = find_rig(p)?;
            Ok((load(&p, false)?, p.display().to_string()))
        }
        None => Ok((test_rig(), "builtin".to_string())),
    }
}
