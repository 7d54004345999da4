use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rgcn::Normalization;

use super::ModelError;

/// How targets are mapped before training; fitted on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetTransform {
    #[default]
    Zscore,
    /// `sign(y) ln(1 + |y|)` followed by z-scoring.
    LogZscore,
}

/// Model and training hyperparameters. Field names are the keys of the
/// `[model]` table of an experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlakConfig {
    pub d_h: usize,
    /// Graph convolution layers per encoder.
    #[serde(rename = "L")]
    pub layers: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Meta-paths proposed per task.
    #[serde(rename = "N_P")]
    pub n_p: usize,
    pub seed: u64,
    /// Neighbor normalization of the sub-KG encoders.
    pub normalization: Normalization,
    /// Neighbor normalization of the global encoder.
    pub global_normalization: Normalization,
    pub no_self_update: bool,
    pub no_rec: bool,
    pub no_trans: bool,
    pub no_attn: bool,
    /// Per-indicator transform; indicators not listed use z-scoring.
    pub target_transform: BTreeMap<String, TargetTransform>,
    /// Standard deviation of the per-entity part of the initial embeddings.
    pub embed_std: f64,
    /// Standard deviation of the shared per-type part of the initial
    /// embeddings; `0` gives plain i.i.d. rows.
    pub type_std: f64,
}

impl Default for SlakConfig {
    fn default() -> Self {
        SlakConfig {
            d_h: 16,
            layers: 2,
            lr: 0.01,
            max_epochs: 500,
            patience: 20,
            n_p: 3,
            seed: 0,
            normalization: Normalization::Mean,
            global_normalization: Normalization::Mean,
            no_self_update: false,
            no_rec: false,
            no_trans: false,
            no_attn: false,
            target_transform: BTreeMap::new(),
            embed_std: 0.1,
            type_std: 1.0,
        }
    }
}

impl SlakConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let c: Self = toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let p = path.as_ref();
        let text = fs::read_to_string(p)
            .map_err(|e| ModelError::Config(format!("{}: {e}", p.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.n_p == 0 {
            return bad("N_P must be at least 1");
        }
        if self.d_h == 0 || self.layers == 0 {
            return bad("d_h and L must be positive");
        }
        if self.max_epochs == 0 || self.patience >= self.max_epochs {
            return bad("patience must be smaller than max_epochs");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.embed_std > 0.0 && self.embed_std.is_finite()) {
            return bad("embed_std must be positive");
        }
        if !(self.type_std >= 0.0 && self.type_std.is_finite()) {
            return bad("type_std must be non-negative");
        }
        if self.no_self_update && self.no_rec {
            return bad("no_self_update and no_rec together leave round 2 without meta-paths");
        }
        Ok(())
    }

    pub fn transform_for(&self, indicator: &str) -> TargetTransform {
        self.target_transform
            .get(indicator)
            .copied()
            .unwrap_or_default()
    }

    /// Ablation flags that are switched on, by name.
    pub fn active_ablations(&self) -> Vec<&'static str> {
        [
            ("no_self_update", self.no_self_update),
            ("no_rec", self.no_rec),
            ("no_trans", self.no_trans),
            ("no_attn", self.no_attn),
        ]
        .into_iter()
        .filter_map(|(n, on)| on.then_some(n))
        .collect()
    }

    /// Turns on one ablation flag by name.
    pub fn set_ablation(&mut self, flag: &str) -> Result<(), ModelError> {
        match flag {
            "no_self_update" => self.no_self_update = true,
            "no_rec" => self.no_rec = true,
            "no_trans" => self.no_trans = true,
            "no_attn" => self.no_attn = true,
            other => {
                return Err(ModelError::Config(format!(
                    "unknown ablation flag `{other}`"
                )))
            }
        }
        Ok(())
    }
}

/// A transform with its training-split statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedTransform {
    pub kind: TargetTransform,
    pub mean: f64,
    pub std: f64,
}

fn signed_log(y: f64) -> f64 {
    y.signum() * y.abs().ln_1p()
}

fn signed_exp(t: f64) -> f64 {
    t.signum() * t.abs().exp_m1()
}

impl FittedTransform {
    pub fn fit(kind: TargetTransform, train: &[f64]) -> Result<Self, ModelError> {
        if train.is_empty() {
            return Err(ModelError::Config("no training targets".into()));
        }
        let pre: Vec<f64> = train.iter().map(|&y| Self::pre(kind, y)).collect();
        let n = pre.len() as f64;
        let mean = pre.iter().sum::<f64>() / n;
        let std = (pre.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        if std == 0.0 || !std.is_finite() {
            return Err(ModelError::Config("training targets are constant".into()));
        }
        Ok(FittedTransform { kind, mean, std })
    }

    fn pre(kind: TargetTransform, y: f64) -> f64 {
        match kind {
            TargetTransform::Zscore => y,
            TargetTransform::LogZscore => signed_log(y),
        }
    }

    pub fn forward(&self, y: f64) -> f64 {
        (Self::pre(self.kind, y) - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        let t = z * self.std + self.mean;
        match self.kind {
            TargetTransform::Zscore => t,
            TargetTransform::LogZscore => signed_exp(t),
        }
    }
}
