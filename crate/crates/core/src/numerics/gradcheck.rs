use crate::scalar::Scalar;

use super::params::{Gradients, ParameterSet};
use super::NumericsError;

/// Denominator floor for the relative error, so that entries whose true
/// gradient is numerically zero are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter, flat index)` of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compares analytic gradients from `loss_and_grads` to central finite
/// differences with step `h` on every scalar of `params`.
///
/// Relative error per entry is `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn grad_check<T, F>(
    params: &mut ParameterSet<T>,
    loss_and_grads: F,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport, NumericsError>
where
    T: Scalar,
    F: Fn(&ParameterSet<T>) -> Result<(T, Gradients<T>), NumericsError>,
{
    let (_, analytic) = loss_and_grads(params)?;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let step = T::lit(h);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tolerance,
    };
    for name in names {
        let n = params.get(&name).map_or(0, |t| t.len());
        for i in 0..n {
            let orig = params.get(&name).unwrap().data()[i];
            params.get_mut(&name).unwrap().data_mut()[i] = orig + step;
            let plus = loss_and_grads(params)?.0;
            params.get_mut(&name).unwrap().data_mut()[i] = orig - step;
            let minus = loss_and_grads(params)?.0;
            params.get_mut(&name).unwrap().data_mut()[i] = orig;

            let numeric = ((plus - minus) / (step + step)).to_f64_lossy();
            let a = analytic
                .get(&name)
                .map_or(0.0, |g| g.data()[i].to_f64_lossy());
            let denom = a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::rc::Rc;

    use super::*;
    use crate::numerics::{Tape, Tensor};
    use crate::util::stage_rng;

    fn linear_setup() -> (ParameterSet<f64>, Tensor<f64>, Rc<Tensor<f64>>) {
        let mut rng = stage_rng(3, "gc");
        let mut p = ParameterSet::new();
        p.insert_normal("w", 4, 2, 0.5, &mut rng).unwrap();
        p.insert_normal("b", 1, 2, 0.5, &mut rng).unwrap();
        let x = Tensor::from_rows(&[
            vec![0.3, -1.2, 0.5, 2.0],
            vec![1.1, 0.4, -0.7, 0.2],
            vec![-0.9, 0.8, 0.1, -0.3],
        ]);
        let y = Rc::new(Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![-1.0, 2.0],
            vec![0.5, 0.5],
        ]));
        (p, x, y)
    }

    #[test]
    fn linear_layer_mse_passes_tight() {
        let (mut p, x, y) = linear_setup();
        let f = |ps: &ParameterSet<f64>| {
            let mut t = Tape::new();
            let xv = t.leaf(x.clone())?;
            let w = t.param(ps, "w")?;
            let b = t.param(ps, "b")?;
            let z = t.matmul(xv, w)?;
            let z = t.add_row(z, b)?;
            let l = t.mse(z, y.clone())?;
            Ok((t.value(l).get(0, 0), t.backward(l)?))
        };
        let r = grad_check(&mut p, f, 1e-5, 1e-6).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.checked, 10);
    }

    #[test]
    fn corrupted_backward_rule_fails() {
        let (mut p, x, y) = linear_setup();
        let f = |ps: &ParameterSet<f64>| {
            let mut t = Tape::new();
            let xv = t.leaf(x.clone())?;
            let w = t.param(ps, "w")?;
            let b = t.param(ps, "b")?;
            let z = t.matmul(xv, w)?;
            let z = t.add_row(z, b)?;
            let z = t.broken_relu(z)?;
            let l = t.mse(z, y.clone())?;
            Ok((t.value(l).get(0, 0), t.backward(l)?))
        };
        let r = grad_check(&mut p, f, 1e-5, 1e-4).unwrap();
        assert!(!r.passed(), "{r:?}");
    }

    #[test]
    fn softmax_weighted_sum_passes() {
        let mut rng = stage_rng(9, "gc2");
        let mut p = ParameterSet::<f64>::new();
        p.insert_normal("logits", 3, 4, 1.0, &mut rng).unwrap();
        p.insert_normal("vals", 3, 1, 1.0, &mut rng).unwrap();
        let target = Rc::new(Tensor::column(vec![0.2, -0.4, 1.0]));
        let f = |ps: &ParameterSet<f64>| {
            let mut t = Tape::new();
            let l = t.param(ps, "logits")?;
            let v = t.param(ps, "vals")?;
            let s = t.row_softmax(l)?;
            let c0 = t.col(s, 0)?;
            let c2 = t.col(s, 2)?;
            let c = t.concat_cols(&[c0, c2])?;
            let q = t.leaf(Tensor::from_rows(&[vec![1.0, -2.0]]))?;
            let d = t.scaled_dot(c, q, 0.5)?;
            let m = t.mul_rows(d, v)?;
            let m = t.scale(m, 3.0)?;
            let loss = t.mse(m, target.clone())?;
            Ok((t.value(loss).get(0, 0), t.backward(loss)?))
        };
        let r = grad_check(&mut p, f, 1e-5, 1e-6).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
