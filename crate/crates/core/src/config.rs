//! Pipeline configuration, read from and written to JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::aco::AcoConfig;
use crate::dataset::{read_json, write_json};
use crate::error::{Error, Result};
use crate::gat::GatConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub pretrain_epochs: usize,
    pub train_epochs: usize,
    pub pretrain_lr: f64,
    pub train_lr: f64,
    pub vcdn_lr: f64,
    pub lr_step: usize,
    pub lr_gamma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            pretrain_epochs: 500,
            train_epochs: 500,
            pretrain_lr: 0.01,
            train_lr: 0.001,
            vcdn_lr: 0.05,
            lr_step: 20,
            lr_gamma: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Class index treated as positive in binary tasks.
    pub positive_class: usize,
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { positive_class: 0, threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub folds: usize,
    /// Fraction of the most correlated feature pairs dropped, per omic (one
    /// value applies to all omics).
    pub feature_sparsity: Vec<f64>,
    /// Fraction of the most similar patient pairs dropped when no explicit
    /// threshold is given.
    pub patient_sparsity: f64,
    pub patient_threshold: Option<f64>,
    pub aco: AcoConfig,
    pub gat: GatConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            folds: 10,
            feature_sparsity: vec![0.9, 0.9, 0.8],
            patient_sparsity: 0.9,
            patient_threshold: None,
            aco: AcoConfig::default(),
            gat: GatConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Named dataset presets for the GAT/training hyperparameters.
pub fn preset(name: &str) -> Result<Config> {
    let mut c = Config::default();
    match name.to_ascii_lowercase().as_str() {
        "blca" => {}
        "lgg" => {
            c.gat.heads = 2;
            c.patient_sparsity = 0.85;
            c.gat.dropout = 0.3;
            c.train.pretrain_lr = 0.001;
        }
        "rcc" => {
            c.gat.heads = 2;
            c.patient_sparsity = 0.8;
            c.train.pretrain_lr = 0.001;
        }
        other => return Err(Error::Config(format!("unknown preset {other:?} (blca, lgg, rcc)"))),
    }
    Ok(c)
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        if !path.exists() {
            return Err(Error::Usage(format!("config file {} not found", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Config = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load_resolved(dir: &Path) -> Result<Config> {
        read_json(&dir.join("config.json"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if self.feature_sparsity.is_empty() || self.feature_sparsity.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("feature_sparsity values must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.patient_sparsity) {
            return Err(Error::Config("patient_sparsity must lie in [0, 1]".into()));
        }
        let t = &self.train;
        for (name, lr) in [("pretrain_lr", t.pretrain_lr), ("train_lr", t.train_lr), ("vcdn_lr", t.vcdn_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if t.lr_step == 0 || !(t.lr_gamma > 0.0 && t.lr_gamma <= 1.0) {
            return Err(Error::Config("lr_step must be positive and lr_gamma in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(Error::Config("eval threshold must lie in [0, 1]".into()));
        }
        self.aco.validate()?;
        self.gat.validate()
    }

    /// Sparsity rate of omic `m` of `n`.
    pub fn feature_sparsity_for(&self, m: usize, n: usize) -> Result<f64> {
        match self.feature_sparsity.len() {
            1 => Ok(self.feature_sparsity[0]),
            k if k == n => Ok(self.feature_sparsity[m]),
            k => Err(Error::Config(format!("feature_sparsity has {k} entries for {n} omics"))),
        }
    }
}

/// JSON Schema (draft 2020-12) of the configuration file.
pub fn schema() -> serde_json::Value {
    let num = |min: f64, max: f64| json!({"type": "number", "minimum": min, "maximum": max});
    let pos_int = json!({"type": "integer", "minimum": 1});
    json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "hgomics configuration",
        "type": "object",
        "additionalProperties": false,
        "properties": {
            "seed": {"type": "integer", "minimum": 0},
            "folds": {"type": "integer", "minimum": 2},
            "feature_sparsity": {"type": "array", "items": num(0.0, 1.0), "minItems": 1},
            "patient_sparsity": num(0.0, 1.0),
            "patient_threshold": {"type": ["number", "null"]},
            "aco": {
                "type": "object",
                "additionalProperties": false,
                "properties": {
                    "iterations": pos_int,
                    "agents_per_omic": pos_int,
                    "c_v": {"type": "number", "exclusiveMinimum": 0},
                    "c_e": {"type": "number", "exclusiveMinimum": 0},
                    "rho_v": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "rho_e": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "rho_m": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "q0": num(0.0, 1.0),
                    "budget_per_agent": pos_int,
                    "top_b": pos_int
                }
            },
            "gat": {
                "type": "object",
                "additionalProperties": false,
                "properties": {
                    "hidden": {"type": "array", "items": pos_int, "minItems": 1},
                    "heads": pos_int,
                    "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                    "leaky_slope": {"type": "number"}
                }
            },
            "train": {
                "type": "object",
                "additionalProperties": false,
                "properties": {
                    "pretrain_epochs": {"type": "integer", "minimum": 0},
                    "train_epochs": {"type": "integer", "minimum": 0},
                    "pretrain_lr": {"type": "number", "exclusiveMinimum": 0},
                    "train_lr": {"type": "number", "exclusiveMinimum": 0},
                    "vcdn_lr": {"type": "number", "exclusiveMinimum": 0},
                    "lr_step": pos_int,
                    "lr_gamma": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}
                }
            },
            "eval": {
                "type": "object",
                "additionalProperties": false,
                "properties": {
                    "positive_class": {"type": "integer", "minimum": 0},
                    "threshold": num(0.0, 1.0)
                }
            }
        }
    })
}
