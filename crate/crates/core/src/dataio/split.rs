use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::util::stage_rng;

use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed,
        }
    }
}

/// Positions into the region list passed to [`split`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Random partition of `n` regions. Validation and test sizes are
/// `floor(ratio * n)`; the remainder goes to training.
pub fn split(n: usize, spec: &SplitSpec) -> Result<Split, DataError> {
    if n < 5 {
        return Err(DataError::TooFewRegions(n));
    }
    let total = spec.train + spec.val + spec.test;
    if (total - 1.0).abs() > 1e-9 || spec.train <= 0.0 || spec.val <= 0.0 || spec.test <= 0.0 {
        return Err(DataError::BadRatios(spec.train, spec.val, spec.test));
    }
    let n_val = (spec.val * n as f64 + 1e-9).floor() as usize;
    let n_test = (spec.test * n as f64 + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stage_rng(spec.seed, "split"));
    let val = order[..n_val].to_vec();
    let test = order[n_val..n_val + n_test].to_vec();
    let train = order[n_val + n_test..].to_vec();
    Ok(Split { train, val, test })
}
