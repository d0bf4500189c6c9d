//! Run configuration in a flat `key = value` text format, and run manifests.
//!
//! Keys are dotted paths into [`RunConfig`] (for example `bound.epsilon` or
//! `scene.robot_params.link_lengths`). Values are JSON; bare words are read
//! as strings. `slide-lab` prints every key with `--dump-config`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::baselines::{Gains, SsaConfig};
use crate::bounds::BoundConfig;
use crate::datagen::DatagenConfig;
use crate::error::ConfigError;
use crate::human_sim::{HumanConfig, HumanMode};
use crate::predictor::TrainConfig;
use crate::reachavoid::env::EnvConfig;
use crate::reachavoid::sac::RlConfig;
use crate::world::SceneConfig;

/// SHA-256 (hex) of the canonical JSON encoding of `value`.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub scene: SceneConfig,
    /// Human model parameters; the mode is chosen per command.
    pub human: HumanConfig,
    pub robot_gains: Gains,
    pub robot_dwell: f64,
    pub bound: BoundConfig,
    pub ssa: SsaConfig,
    pub predictor: TrainConfig,
    pub failure_scale: f64,
    pub target_scale: f64,
    pub max_ticks: usize,
    pub max_joint_speed: f64,
    pub rl: RlConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = DatagenConfig::new(HumanMode::Influenceable);
        let env = EnvConfig::default();
        Self {
            seed: 0,
            workers: 1,
            scene: data.scene,
            human: data.human,
            robot_gains: data.robot_gains,
            robot_dwell: data.robot_dwell,
            bound: BoundConfig::default(),
            ssa: SsaConfig::default(),
            predictor: TrainConfig::default(),
            failure_scale: env.failure_scale,
            target_scale: env.target_scale,
            max_ticks: env.max_ticks,
            max_joint_speed: env.max_joint_speed,
            rl: RlConfig::default(),
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) if !m.is_empty() && !is_enum_object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        _ => out.push((prefix.to_string(), v.to_string())),
    }
}

/// Single-key objects whose key starts uppercase encode enum variants and
/// are kept whole.
fn is_enum_object(m: &Map<String, Value>) -> bool {
    m.len() == 1 && m.keys().next().is_some_and(|k| k.starts_with(|c: char| c.is_ascii_uppercase()))
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl RunConfig {
    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        flatten("", &serde_json::to_value(self).expect("config serializes"), &mut out);
        out
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Set one dotted key from its text value.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), ConfigError> {
        let mut root = serde_json::to_value(&*self).expect("config serializes");
        let mut node = &mut root;
        for part in key.split('.') {
            node = node
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        }
        *node = parse_value(raw.trim());
        *self = serde_json::from_value(root).map_err(|e| ConfigError::BadValue { key: key.to_string(), msg: e.to_string() })?;
        Ok(())
    }

    /// Apply `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split_once('#').map_or(line, |(a, _)| a).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Parse { line: i + 1, msg: format!("expected `key = value`, got `{line}`") })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Read a config file, or the config recorded in a run manifest.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        if text.trim_start().starts_with('{') {
            let m: RunManifest = serde_json::from_str(&text).map_err(|e| ConfigError::Parse { line: e.line(), msg: e.to_string() })?;
            return Ok(m.config);
        }
        let mut c = Self::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    pub fn hash(&self) -> String {
        hash_json(self)
    }

    pub fn datagen(&self, mode: HumanMode) -> DatagenConfig {
        DatagenConfig {
            human: HumanConfig { mode, ..self.human.clone() },
            scene: self.scene.clone(),
            robot_gains: self.robot_gains,
            robot_dwell: self.robot_dwell,
        }
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            scene: self.scene.clone(),
            human: HumanConfig { mode: HumanMode::Influenceable, ..self.human.clone() },
            max_ticks: self.max_ticks,
            failure_scale: self.failure_scale,
            target_scale: self.target_scale,
            bound: self.bound,
            max_joint_speed: self.max_joint_speed,
        }
    }

    pub fn human_cfg(&self, mode: HumanMode) -> HumanConfig {
        HumanConfig { mode, ..self.human.clone() }
    }
}

/// A file touched by a run, with its content hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> std::io::Result<Self> {
        Ok(Self { path: path.display().to_string(), sha256: hash_bytes(&std::fs::read(path)?) })
    }
}

/// Record of one command invocation, written next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            args,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config_hash: config.hash(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: config.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("manifest serializes"))
    }
}
