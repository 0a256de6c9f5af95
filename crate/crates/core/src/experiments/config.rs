use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Method, SchemeKind, TaskKind};
use crate::error::{Error, Result};
use crate::hrv::HrvOptions;
use crate::models::{LossConfig, NetworkConfig, TrainConfig};
use crate::qrs::DetectorConfig;

/// Layer sizes shared by every network in a run. Input and pain-output
/// sizes come from the method and task of each cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub encoder_widths: Vec<usize>,
    pub head_hidden: usize,
    pub age_classes: usize,
    pub gender_classes: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        let n = NetworkConfig::default();
        Self {
            encoder_widths: n.encoder_widths,
            head_hidden: n.head_hidden,
            age_classes: n.age_classes,
            gender_classes: n.gender_classes,
        }
    }
}

/// Everything an evaluation run depends on. Loaded from TOML; every key is
/// optional and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub workers: usize,
    pub schemes: Vec<SchemeKind>,
    pub tasks: Vec<TaskKind>,
    pub methods: Vec<Method>,
    pub network: ArchitectureConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub detector: DetectorConfig,
    pub hrv: HrvOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            schemes: vec![SchemeKind::Basic],
            tasks: TaskKind::ALL.to_vec(),
            methods: vec!["ST-NN".parse().expect("valid tag")],
            network: ArchitectureConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            detector: DetectorConfig::default(),
            hrv: HrvOptions::default(),
        }
    }
}

/// Sets `dotted.key = value` entries on a TOML table. Values are parsed as
/// TOML (`12`, `true`, `[1, 0.2, 0.2]`, `"x"`); anything that does not parse
/// is taken as a bare string.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for ov in overrides {
        let (key, value) = ov
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{ov}` is not key=value")))?;
        let value = value.trim();
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let parts: Vec<&str> = key.trim().split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("bad override key `{key}`")));
        }
        let mut cur = &mut *table;
        for p in &parts[..parts.len() - 1] {
            let entry = cur
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
        }
        cur.insert(parts[parts.len() - 1].to_string(), parsed);
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_table(table)
    }

    /// Reads an optional config file, then applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        apply_overrides(&mut table, overrides)?;
        Self::from_table(table)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("method list is empty".into()));
        }
        if self.tasks.is_empty() || self.schemes.is_empty() {
            return Err(Error::Config("task and scheme lists must be nonempty".into()));
        }
        self.train.validate()?;
        self.detector.validate()?;
        self.network_config(self.methods[0], self.tasks[0]).validate()
    }

    /// Network for one cell.
    pub fn network_config(&self, method: Method, task: TaskKind) -> NetworkConfig {
        NetworkConfig {
            input_dim: method.augmentation().input_dim(),
            pain_classes: task.n_classes(),
            encoder_widths: self.network.encoder_widths.clone(),
            head_hidden: self.network.head_hidden,
            age_classes: self.network.age_classes,
            gender_classes: self.network.gender_classes,
            tasks: method.tasks(),
            loss: self.loss,
        }
    }
}
