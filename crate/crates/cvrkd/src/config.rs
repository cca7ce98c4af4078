//! Flat `key = value` run configuration.
//!
//! ```text
//! preset = desk        # desk | tiny | full, the base architecture
//! epochs = 10
//! seed = 0
//! learning_rate = 0.001
//! shuffles = 10
//! ```

use std::path::Path;

use cvrkd_core::model::ArchConfig;
use cvrkd_core::train::{TrainConfig, TRAIN_KEYS};
use cvrkd_core::KvText;

use crate::error::{CliError, CliResult};
use crate::io::read_text;

const RUN_KEYS: &[&str] = &["preset", "shuffles", "eval_seed"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub shuffles: usize,
    pub eval_seed: u64,
}

pub fn preset(name: &str) -> CliResult<ArchConfig> {
    match name {
        "desk" => Ok(ArchConfig::desk()),
        "tiny" => Ok(ArchConfig::tiny()),
        "full" => Ok(ArchConfig::full()),
        other => Err(CliError::Config(format!("unknown preset `{other}` (desk, tiny, full)"))),
    }
}

impl RunConfig {
    /// Every accepted key.
    pub fn keys() -> Vec<&'static str> {
        let mut keys: Vec<&str> = RUN_KEYS.to_vec();
        keys.extend_from_slice(TRAIN_KEYS);
        keys.extend_from_slice(ArchConfig::keys());
        keys
    }

    pub fn from_kv(kv: &KvText) -> CliResult<Self> {
        kv.reject_unknown(&Self::keys())?;
        let mut train = TrainConfig {
            arch: preset(kv.get("preset").map_or("desk", |e| e.value.as_str()))?,
            ..TrainConfig::default()
        };
        train.apply_kv(kv)?;
        Ok(RunConfig {
            train,
            shuffles: kv.parse_opt("shuffles")?.unwrap_or(10),
            eval_seed: kv.parse_opt("eval_seed")?.unwrap_or(0),
        })
    }

    /// Reads `path`, letting `overrides` replace or supply keys.
    pub fn load(path: &Path, overrides: &[(&str, String)]) -> CliResult<Self> {
        let mut kv = KvText::parse(&read_text(path)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for (k, v) in overrides {
            kv.push(k, v);
        }
        Self::from_kv(&kv).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
