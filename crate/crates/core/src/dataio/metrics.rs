use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::DataError;

/// Regression metrics in the units of the targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics<T> {
    pub mae: T,
    pub rmse: T,
    pub r2: T,
}

/// MAE, RMSE and R² with the mean taken over `truth`. Constant `truth` makes
/// R² undefined and is reported as an error.
pub fn metrics<T: Scalar>(pred: &[T], truth: &[T]) -> Result<Metrics<T>, DataError> {
    if pred.len() != truth.len() {
        return Err(DataError::Length {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(DataError::Empty);
    }
    let n = T::from_usize_lossy(truth.len());
    let mean = truth.iter().copied().sum::<T>() / n;
    let ss_tot: T = truth.iter().map(|&y| (y - mean) * (y - mean)).sum();
    if ss_tot == T::zero() {
        return Err(DataError::ConstantTargets);
    }
    let abs: T = pred.iter().zip(truth).map(|(&p, &y)| (p - y).abs()).sum();
    let ss_res: T = pred
        .iter()
        .zip(truth)
        .map(|(&p, &y)| (p - y) * (p - y))
        .sum();
    Ok(Metrics {
        mae: abs / n,
        rmse: (ss_res / n).sqrt(),
        r2: T::one() - ss_res / ss_tot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_fit() {
        let y = [1.0, 5.0, 2.0];
        let m = metrics(&y, &y).unwrap();
        assert_eq!((m.mae, m.rmse, m.r2), (0.0, 0.0, 1.0));
    }

    #[test]
    fn mean_predictor_has_zero_r2() {
        let y = [1.0, 2.0, 3.0];
        let m = metrics::<f64>(&[2.0, 2.0, 2.0], &y).unwrap();
        assert_eq!(m.r2, 0.0);
        assert!((m.mae - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.rmse - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_triple() {
        let m = metrics::<f64>(&[1.0, 2.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((m.mae - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.rmse - 1.0 / 3.0f64.sqrt()).abs() < 1e-12);
        assert!((m.r2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn works_in_f32() {
        let m = metrics(&[1.0f32, 2.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((m.r2 - 0.5).abs() < 1e-6);
    }

    #[test]
    fn constant_targets_error() {
        assert!(matches!(
            metrics(&[1.0, 2.0], &[3.0, 3.0]),
            Err(DataError::ConstantTargets)
        ));
        assert!(matches!(metrics::<f64>(&[], &[]), Err(DataError::Empty)));
        assert!(metrics(&[1.0], &[1.0, 2.0]).is_err());
    }
}
