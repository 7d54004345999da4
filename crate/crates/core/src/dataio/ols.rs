use super::DataError;

/// Ordinary least squares with an intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl OlsFit {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(features)
                .map(|(c, x)| c * x)
                .sum::<f64>()
    }
}

/// Solves the normal equations by Gaussian elimination with partial pivoting.
/// `rows[i]` holds the features of sample `i`.
pub fn fit_ols(rows: &[Vec<f64>], y: &[f64]) -> Result<OlsFit, DataError> {
    if rows.len() != y.len() {
        return Err(DataError::Length {
            pred: rows.len(),
            truth: y.len(),
        });
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    let k = rows[0].len() + 1;
    let mut a = vec![vec![0.0; k + 1]; k];
    for (x, &t) in rows.iter().zip(y) {
        let mut z = Vec::with_capacity(k);
        z.push(1.0);
        z.extend_from_slice(x);
        for i in 0..k {
            for j in 0..k {
                a[i][j] += z[i] * z[j];
            }
            a[i][k] += z[i] * t;
        }
    }
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() < 1e-12 {
            return Err(DataError::Singular);
        }
        a.swap(col, pivot);
        for r in 0..k {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=k {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let beta: Vec<f64> = (0..k).map(|i| a[i][k] / a[i][i]).collect();
    Ok(OlsFit {
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
    })
}
