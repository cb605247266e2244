//! The run configuration file: TOML with one table per component. Every
//! key is optional and unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::data::synth::GeneratorConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::geometry::NmsParams;
use crate::loss::LossConfig;
use crate::model::ModelConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub nms: NmsParams,
    pub eval: EvalConfig,
    pub generator: GeneratorConfig,
}

impl RunConfig {
    /// The CPU-sized setup: 160 px synthetic boards, 128 px crops, the
    /// two-stage backbone and 50 epochs.
    pub fn desk_scale() -> Self {
        Self {
            model: ModelConfig::desk_scale(),
            train: TrainConfig {
                epochs: 50,
                crop_size: 128,
                ..TrainConfig::default()
            },
            generator: GeneratorConfig::desk_scale(),
            ..Self::default()
        }
    }

    /// Parses TOML text, then applies `key.path=value` overrides.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; `None` starts from the defaults of `base`.
    pub fn load(path: Option<&Path>, base: &RunConfig, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => base.to_toml()?,
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.preset.apply(&self.model).validate()?;
        self.train.validate()?;
        self.generator.validate()
    }
}

/// Sets `a.b.c=value`, where value is any TOML literal; bare words are
/// taken as strings.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override {spec:?} is not key=value")))?;
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("{p} in {key} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
