//! Reverse-mode differentiation over a fixed set of matrix primitives.
//!
//! A [`Tape`] records every intermediate value as it is computed. Calling
//! [`Tape::backward`] on a `1 x 1` loss walks the record in reverse and
//! returns the gradient of every parameter that was read through
//! [`Tape::param`]. A tape is single-use: build, backward, drop.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::scalar::Scalar;

use super::params::{Gradients, ParameterSet};
use super::tensor::{SparseMatrix, Tensor};
use super::NumericsError;

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    RowSoftmax(Var),
    ScaledDot {
        keys: Var,
        query: Var,
        scale: T,
    },
    ConcatCols(Vec<Var>),
    Col(Var, usize),
    MulRows(Var, Var),
    Scale(Var, T),
    GatherRows(Var, Rc<Vec<usize>>),
    SpMM(Rc<SparseMatrix<T>>, Var),
    Mse(Var, Rc<Tensor<T>>),
    #[cfg(test)]
    BrokenRelu(Var),
}

impl<T> Op<T> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Relu(_) => "relu",
            Op::RowSoftmax(_) => "row_softmax",
            Op::ScaledDot { .. } => "scaled_dot",
            Op::ConcatCols(_) => "concat_cols",
            Op::Col(..) => "col",
            Op::MulRows(..) => "mul_rows",
            Op::Scale(..) => "scale",
            Op::GatherRows(..) => "gather_rows",
            Op::SpMM(..) => "spmm",
            Op::Mse(..) => "mse",
            #[cfg(test)]
            Op::BrokenRelu(_) => "broken_relu",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    scope: String,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            scope: String::new(),
        }
    }

    /// Prefix attached to the names of nodes recorded from now on; shows up in
    /// shape and non-finite diagnostics.
    pub fn set_scope(&mut self, scope: impl Into<String>) {
        self.scope = scope.into();
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node_name(&self, kind: &str) -> String {
        if self.scope.is_empty() {
            format!("{}#{}", kind, self.nodes.len())
        } else {
            format!("{}/{}#{}", self.scope, kind, self.nodes.len())
        }
    }

    fn shape_err(&self, kind: &str, detail: String) -> NumericsError {
        NumericsError::Shape {
            op: self.node_name(kind),
            detail,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite {
                node: self.node_name(op.kind()),
            });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var, NumericsError> {
        self.push(value, Op::Leaf)
    }

    /// Records a read of parameter `name`; its gradient is reported by
    /// [`Tape::backward`].
    pub fn param(&mut self, params: &ParameterSet<T>, name: &str) -> Result<Var, NumericsError> {
        let value = params
            .get(name)
            .ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))?
            .clone();
        self.push(value, Op::Param(name.to_string()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self
            .value(a)
            .matmul(self.value(b))
            .map_err(|e| self.shape_err("matmul", e.to_string()))?;
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            let d = format!("{}x{} + {}x{}", x.rows(), x.cols(), y.rows(), y.cols());
            return Err(self.shape_err("add", d));
        }
        let mut out = x.clone();
        out.add_assign(y);
        self.push(out, Op::Add(a, b))
    }

    /// Sums a non-empty list of same-shaped values.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var, NumericsError> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| self.shape_err("add", "empty operand list".into()))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// Adds a `1 x m` row to every row of an `n x m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (x, b) = (self.value(a), self.value(row));
        if b.rows() != 1 || b.cols() != x.cols() {
            let d = format!("{}x{} + row {}x{}", x.rows(), x.cols(), b.rows(), b.cols());
            return Err(self.shape_err("add_row", d));
        }
        let mut out = x.clone();
        let bias = b.data().to_vec();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(&bias) {
                *o = *o + bv;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// Rectifier; the derivative at exactly zero is taken as zero.
    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = self
            .value(a)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(a))
    }

    /// Softmax over each row independently.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z = z + *v;
            }
            for v in row.iter_mut() {
                *v = *v / z;
            }
        }
        self.push(out, Op::RowSoftmax(a))
    }

    /// `scale * keys * query^T` for `keys: n x d`, `query: 1 x d`; gives `n x 1`.
    pub fn scaled_dot(&mut self, keys: Var, query: Var, scale: T) -> Result<Var, NumericsError> {
        let (k, q) = (self.value(keys), self.value(query));
        if q.rows() != 1 || q.cols() != k.cols() {
            let d = format!(
                "keys {}x{}, query {}x{}",
                k.rows(),
                k.cols(),
                q.rows(),
                q.cols()
            );
            return Err(self.shape_err("scaled_dot", d));
        }
        let qd = q.data();
        let out: Vec<T> = (0..k.rows())
            .map(|r| k.row(r).iter().zip(qd).map(|(&a, &b)| a * b).sum::<T>() * scale)
            .collect();
        self.push(Tensor::column(out), Op::ScaledDot { keys, query, scale })
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let n = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(self.shape_err("concat_cols", "no parts".into())),
        };
        if parts.iter().any(|&p| self.value(p).rows() != n) {
            return Err(self.shape_err("concat_cols", "row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(n, total);
        for r in 0..n {
            let mut c0 = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[c0..c0 + src.len()].copy_from_slice(src);
                c0 += src.len();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Column `j` as an `n x 1` matrix.
    pub fn col(&mut self, a: Var, j: usize) -> Result<Var, NumericsError> {
        let x = self.value(a);
        if j >= x.cols() {
            let d = format!("column {} of {}x{}", j, x.rows(), x.cols());
            return Err(self.shape_err("col", d));
        }
        let out = Tensor::column((0..x.rows()).map(|r| x.get(r, j)).collect());
        self.push(out, Op::Col(a, j))
    }

    /// Scales row `i` of `a` by `w[i]` (`w: n x 1`).
    pub fn mul_rows(&mut self, a: Var, w: Var) -> Result<Var, NumericsError> {
        let (x, s) = (self.value(a), self.value(w));
        if s.cols() != 1 || s.rows() != x.rows() {
            let d = format!(
                "{}x{} by weights {}x{}",
                x.rows(),
                x.cols(),
                s.rows(),
                s.cols()
            );
            return Err(self.shape_err("mul_rows", d));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            let k = s.get(r, 0);
            for v in out.row_mut(r) {
                *v = *v * k;
            }
        }
        self.push(out, Op::MulRows(a, w))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var, NumericsError> {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Result<Var, NumericsError> {
        let x = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
            let d = format!("row {} of {}x{}", bad, x.rows(), x.cols());
            return Err(self.shape_err("gather_rows", d));
        }
        let out = x.select_rows(&idx);
        self.push(out, Op::GatherRows(a, idx))
    }

    /// Constant sparse matrix times a recorded dense value.
    pub fn spmm(&mut self, m: Rc<SparseMatrix<T>>, x: Var) -> Result<Var, NumericsError> {
        let out = m
            .matmul_dense(self.value(x))
            .map_err(|e| self.shape_err("spmm", e.to_string()))?;
        self.push(out, Op::SpMM(m, x))
    }

    /// Mean squared error against a constant target; `1 x 1`.
    pub fn mse(&mut self, pred: Var, target: Rc<Tensor<T>>) -> Result<Var, NumericsError> {
        let p = self.value(pred);
        if !p.same_shape(&target) || p.is_empty() {
            let d = format!(
                "pred {}x{}, target {}x{}",
                p.rows(),
                p.cols(),
                target.rows(),
                target.cols()
            );
            return Err(self.shape_err("mse", d));
        }
        let n = T::from_usize_lossy(p.len());
        let s: T = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        self.push(Tensor::scalar(s / n), Op::Mse(pred, target))
    }

    #[cfg(test)]
    pub(crate) fn broken_relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = self
            .value(a)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::BrokenRelu(a))
    }

    /// Gradients of the `1 x 1` value `loss` with respect to every parameter
    /// read on this tape. Parameters read several times accumulate.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumericsError> {
        let l = self.value(loss);
        if l.rows() != 1 || l.cols() != 1 {
            return Err(NumericsError::Shape {
                op: "backward".into(),
                detail: format!("loss must be 1x1, got {}x{}", l.rows(), l.cols()),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        let mut out: BTreeMap<String, Tensor<T>> = BTreeMap::new();

        fn acc<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
            match slot {
                Some(t) => t.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(name) => match out.get_mut(name) {
                    Some(t) => t.add_assign(&g),
                    None => {
                        out.insert(name.clone(), g);
                    }
                },
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b))?;
                    let db = self.value(*a).t_matmul(&g)?;
                    acc(&mut grads[a.0], da);
                    acc(&mut grads[b.0], db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads[b.0], g.clone());
                    acc(&mut grads[a.0], g);
                }
                Op::AddRow(a, row) => {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, &v) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d = *d + v;
                        }
                    }
                    acc(&mut grads[row.0], db);
                    acc(&mut grads[a.0], g);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut d = g;
                    for (dv, &xv) in d.data_mut().iter_mut().zip(x.data()) {
                        if xv <= T::zero() {
                            *dv = T::zero();
                        }
                    }
                    acc(&mut grads[a.0], d);
                }
                #[cfg(test)]
                Op::BrokenRelu(a) => {
                    // negative control: passes the upstream gradient through unmasked
                    acc(&mut grads[a.0], g);
                }
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let mut d = Tensor::zeros_like(y);
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for (dv, (&yv, &gv)) in d.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *dv = yv * (gv - dot);
                        }
                    }
                    acc(&mut grads[a.0], d);
                }
                Op::ScaledDot { keys, query, scale } => {
                    let (k, q) = (self.value(*keys), self.value(*query));
                    let mut dk = Tensor::zeros_like(k);
                    let mut dq = Tensor::zeros_like(q);
                    for r in 0..k.rows() {
                        let gr = g.get(r, 0) * *scale;
                        for (c, (dkv, &qv)) in dk.row_mut(r).iter_mut().zip(q.data()).enumerate() {
                            *dkv = gr * qv;
                            let cur = dq.get(0, c);
                            dq.set(0, c, cur + gr * k.get(r, c));
                        }
                    }
                    acc(&mut grads[keys.0], dk);
                    acc(&mut grads[query.0], dq);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let mut d = Tensor::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + w]);
                        }
                        c0 += w;
                        acc(&mut grads[p.0], d);
                    }
                }
                Op::Col(a, j) => {
                    let x = self.value(*a);
                    let mut d = Tensor::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        d.set(r, *j, g.get(r, 0));
                    }
                    acc(&mut grads[a.0], d);
                }
                Op::MulRows(a, w) => {
                    let (x, s) = (self.value(*a), self.value(*w));
                    let mut da = g.clone();
                    let mut dw = Tensor::zeros(s.rows(), 1);
                    for r in 0..x.rows() {
                        let k = s.get(r, 0);
                        let mut sum = T::zero();
                        for (dv, &xv) in da.row_mut(r).iter_mut().zip(x.row(r)) {
                            sum = sum + *dv * xv;
                            *dv = *dv * k;
                        }
                        dw.set(r, 0, sum);
                    }
                    acc(&mut grads[a.0], da);
                    acc(&mut grads[w.0], dw);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    acc(&mut grads[a.0], g.map(|v| v * c));
                }
                Op::GatherRows(a, idx) => {
                    let x = self.value(*a);
                    let mut d = Tensor::zeros(x.rows(), x.cols());
                    for (k, &src) in idx.iter().enumerate() {
                        for (dv, &gv) in d.row_mut(src).iter_mut().zip(g.row(k)) {
                            *dv = *dv + gv;
                        }
                    }
                    acc(&mut grads[a.0], d);
                }
                Op::SpMM(m, x) => {
                    acc(&mut grads[x.0], m.t_matmul_dense(&g));
                }
                Op::Mse(pred, target) => {
                    let p = self.value(*pred);
                    let k = g.get(0, 0) * T::lit(2.0) / T::from_usize_lossy(p.len());
                    let d = Tensor::from_vec(
                        p.shape().to_vec(),
                        p.data()
                            .iter()
                            .zip(target.data())
                            .map(|(&a, &b)| (a - b) * k)
                            .collect(),
                    )?;
                    acc(&mut grads[pred.0], d);
                }
            }
        }
        Ok(Gradients::new(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(pairs: &[(&str, Tensor<f64>)]) -> ParameterSet<f64> {
        let mut p = ParameterSet::new();
        for (n, t) in pairs {
            p.insert(n, t.clone()).unwrap();
        }
        p
    }

    #[test]
    fn mse_at_minimum_is_zero_with_zero_grads() {
        let params = set(&[("pred", Tensor::from_rows(&[vec![1.0, 2.0]]))]);
        let mut t = Tape::new();
        let p = t.param(&params, "pred").unwrap();
        let l = t
            .mse(p, Rc::new(Tensor::from_rows(&[vec![1.0, 2.0]])))
            .unwrap();
        assert_eq!(t.value(l).get(0, 0), 0.0);
        let g = t.backward(l).unwrap();
        assert!(g.get("pred").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_backward_convention() {
        let params = set(&[("x", Tensor::from_rows(&[vec![-1.0, 2.0, 0.0]]))]);
        let mut t = Tape::new();
        let x = t.param(&params, "x").unwrap();
        let y = t.relu(x).unwrap();
        let w = t.leaf(Tensor::column(vec![3.0, 5.0, 7.0])).unwrap();
        let s = t.matmul(y, w).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get("x").unwrap().data(), &[0.0, 5.0, 0.0]);
    }

    #[test]
    fn softmax_rows_normalised_and_shift_invariant() {
        let mut t = Tape::<f64>::new();
        let a = t
            .leaf(Tensor::from_rows(&[
                vec![1.0, 2.0, 3.0],
                vec![-50.0, 0.0, 700.0],
            ]))
            .unwrap();
        let b = t
            .leaf(Tensor::from_rows(&[
                vec![11.0, 12.0, 13.0],
                vec![-45.0, 5.0, 705.0],
            ]))
            .unwrap();
        let sa = t.row_softmax(a).unwrap();
        let sb = t.row_softmax(b).unwrap();
        for r in 0..2 {
            let s: f64 = t.value(sa).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(t.value(sa).row(r).iter().all(|&v| v >= 0.0));
        }
        assert!(t.value(sa).max_abs_diff(t.value(sb)) < 1e-12);
    }

    #[test]
    fn non_finite_reported_with_scope() {
        let mut t = Tape::<f64>::new();
        t.set_scope("head");
        let err = t.leaf(Tensor::scalar(f64::NAN)).unwrap_err();
        match err {
            NumericsError::NonFinite { node } => assert!(node.starts_with("head/leaf"), "{node}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn shape_mismatch_at_composition() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(Tensor::zeros(2, 3)).unwrap();
        let b = t.leaf(Tensor::zeros(2, 3)).unwrap();
        assert!(matches!(t.matmul(a, b), Err(NumericsError::Shape { .. })));
        let c = t.leaf(Tensor::zeros(3, 2)).unwrap();
        assert!(t.add(a, c).is_err());
    }

    #[test]
    fn shared_parameter_accumulates() {
        let params = set(&[("w", Tensor::scalar(3.0))]);
        let mut t = Tape::new();
        let a = t.param(&params, "w").unwrap();
        let b = t.param(&params, "w").unwrap();
        let p = t.matmul(a, b).unwrap();
        let g = t.backward(p).unwrap();
        assert_eq!(g.get("w").unwrap().get(0, 0), 6.0);
    }
}
