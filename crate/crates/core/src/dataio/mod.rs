//! Indicator tables, region splits, regression metrics, and the synthetic
//! planted-signal dataset generator.

mod indicators;
mod metrics;
mod ols;
mod split;
mod synth;

use thiserror::Error;

pub use indicators::RegionIndicatorTable;
pub use metrics::{metrics, Metrics};
pub use ols::{fit_ols, OlsFit};
pub use split::{split, Split, SplitSpec};
pub use synth::{
    count_features, generate_synthetic, oracle_r2, write_dataset, IndicatorManifest, IndicatorSpec,
    OracleReport, PlantedPath, SyntheticDataset, SyntheticManifest, SyntheticSpec,
};

use crate::kg::KgError;
use crate::metapath::MetaPathError;

/// File names inside a dataset directory.
pub const ENTITIES_FILE: &str = "entities.tsv";
pub const FACTS_FILE: &str = "facts.tsv";
pub const SCHEMA_FILE: &str = "schema.tsv";
pub const INDICATORS_FILE: &str = "indicators.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{pred} predictions for {truth} targets")]
    Length { pred: usize, truth: usize },
    #[error("no targets to evaluate")]
    Empty,
    #[error("targets are constant, R\u{b2} is undefined")]
    ConstantTargets,
    #[error("need at least 5 regions to split, got {0}")]
    TooFewRegions(usize),
    #[error("split ratios {0}/{1}/{2} must be positive and sum to 1")]
    BadRatios(f64, f64, f64),
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("indicator table names unknown region `{0}`")]
    UnknownRegion(String),
    #[error("`{0}` is not a Region")]
    NotARegion(String),
    #[error("duplicate value for region `{region}`, indicator `{indicator}`")]
    Duplicate { region: String, indicator: String },
    #[error("no `{indicator}` value for region `{region}`")]
    MissingValue { region: String, indicator: String },
    #[error("unknown indicator `{0}`")]
    UnknownIndicator(String),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("planted path `{path}` for `{indicator}` has no instances in the generated graph")]
    NoInstances { indicator: String, path: String },
    #[error("singular least-squares system")]
    Singular,
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    MetaPath(#[from] MetaPathError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
