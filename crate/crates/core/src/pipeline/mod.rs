//! Experiment orchestration: config files, dataset directories, the two
//! training rounds, search runs, run manifests and reports.

mod report;
mod run;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataio::{
    RegionIndicatorTable, SplitSpec, ENTITIES_FILE, FACTS_FILE, INDICATORS_FILE, SCHEMA_FILE,
};
use crate::kg::{load_kg, load_schema, KnowledgeGraph, Schema};
use crate::model::SlakConfig;
use crate::search::GaConfig;
use crate::util::sha256_hex;
use crate::{Error, Result};

pub use report::{report, ReportSummary};
pub use run::{
    read_embeddings, run_experiment, run_round1, run_round2, run_search, write_embeddings,
    ChatSetup, Round, RoundRecord, RunManifest, RunOptions, SearchAlgo, TaskRecord,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub indicator: String,
    /// Short phrase completing "predict ... for each region".
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSettings {
    /// Indicator whose validation R² is the fitness; the first task if unset.
    pub indicator: Option<String>,
    pub iterations: usize,
    pub per_iter: usize,
    pub ga: GaConfig,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            indicator: None,
            iterations: 6,
            per_iter: 5,
            ga: GaConfig::default(),
        }
    }
}

/// An experiment file: model hyperparameters under `[model]`, one
/// `[[task]]` table per indicator, optional `[split]` and `[search]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Parallel training workers; defaults to the number of tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Mock agent fixture file; the shipped fixture if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_fixture: Option<PathBuf>,
    #[serde(default)]
    pub split: SplitRatios,
    #[serde(default)]
    pub model: SlakConfig,
    #[serde(rename = "task")]
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub search: SearchSettings,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let mut c = Self::from_toml_str(&text)?;
        if let (Some(f), Some(dir)) = (&c.mock_fixture, p.parent()) {
            if f.is_relative() {
                c.mock_fixture = Some(dir.join(f));
            }
        }
        Ok(c)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.tasks.is_empty() {
            return Err(Error::Config("at least one [[task]] is required".into()));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if self.tasks[..i].iter().any(|u| u.indicator == t.indicator) {
                return Err(Error::Config(format!(
                    "task `{}` listed twice",
                    t.indicator
                )));
            }
            if t.indicator.is_empty()
                || !t
                    .indicator
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_')
            {
                return Err(Error::Config(format!(
                    "task name `{}` must be [A-Za-z0-9_]+",
                    t.indicator
                )));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        if let Some(ind) = &self.search.indicator {
            if !self.tasks.iter().any(|t| &t.indicator == ind) {
                return Err(Error::Config(format!(
                    "search indicator `{ind}` is not a task"
                )));
            }
        }
        Ok(())
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train: self.split.train,
            val: self.split.val,
            test: self.split.test,
            seed: self.model.seed,
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
            .unwrap_or(self.tasks.len())
            .min(self.tasks.len())
            .max(1)
    }
}

/// A dataset directory as written by the synthetic generator: entities,
/// facts, optional schema, indicator table.
#[derive(Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub kg: KnowledgeGraph,
    pub table: RegionIndicatorTable,
    pub indicators_hash: String,
}

impl Dataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::MissingArtifact(format!(
                "dataset directory {}",
                dir.display()
            )));
        }
        let schema_path = dir.join(SCHEMA_FILE);
        let schema = if schema_path.exists() {
            load_schema(&schema_path)?
        } else {
            Schema::default_lbkg()
        };
        let kg = load_kg(
            dir.join(ENTITIES_FILE),
            dir.join(FACTS_FILE),
            Arc::new(schema),
        )?;
        let ind_path = dir.join(INDICATORS_FILE);
        let table = RegionIndicatorTable::load_csv(&ind_path)?;
        table.validate(&kg)?;
        let bytes = fs::read(&ind_path).map_err(|e| Error::io(&ind_path, e))?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            kg,
            table,
            indicators_hash: sha256_hex(&bytes),
        })
    }
}
