//! Scaled dot-product attention across embedding sources.
//!
//! For sources `i = 1..N` with region embeddings `V_i` (`n x d`) and queries
//! `Q` (`N x d`), region `j` gets logits `<Q_i, V_i[j]> / sqrt(d)`, a softmax
//! over `i`, and the convex combination `sum_i alpha_ij V_i[j]`.

use std::rc::Rc;

use rand::Rng;

use crate::numerics::{NumericsError, ParameterSet, Tape, Tensor, Var};
use crate::scalar::Scalar;

use super::{FusionError, EMBED_DIM};

/// Where the per-source queries come from.
#[derive(Debug, Clone, PartialEq)]
pub enum QuerySource {
    /// `E W_Q` with `E` the semantic embeddings (`N x 768`) and `W_Q` the
    /// parameter `"{prefix}/W_Q"`.
    Semantic,
    /// A free learned query per source, parameter `"{prefix}/free_q"`.
    Free,
}

/// Projection parameters of one attention module.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub prefix: String,
    pub d_llm: usize,
    pub d_h: usize,
    pub source: QuerySource,
    /// Number of sources; only used by [`QuerySource::Free`].
    pub n_sources: usize,
}

impl AttentionParams {
    pub fn semantic(prefix: &str, d_h: usize) -> Self {
        AttentionParams {
            prefix: prefix.into(),
            d_llm: EMBED_DIM,
            d_h,
            source: QuerySource::Semantic,
            n_sources: 0,
        }
    }

    pub fn free(prefix: &str, d_h: usize, n_sources: usize) -> Self {
        AttentionParams {
            prefix: prefix.into(),
            d_llm: EMBED_DIM,
            d_h,
            source: QuerySource::Free,
            n_sources,
        }
    }

    pub fn wq_name(&self) -> String {
        format!("{}/W_Q", self.prefix)
    }

    pub fn free_name(&self) -> String {
        format!("{}/free_q", self.prefix)
    }

    pub fn init_params<T: Scalar, R: Rng + ?Sized>(
        &self,
        params: &mut ParameterSet<T>,
        rng: &mut R,
    ) -> Result<(), NumericsError> {
        match self.source {
            QuerySource::Semantic => {
                params.insert_glorot(&self.wq_name(), self.d_llm, self.d_h, rng)
            }
            QuerySource::Free => {
                params.insert_glorot(&self.free_name(), self.n_sources, self.d_h, rng)
            }
        }
    }

    /// Records the `N x d_h` query matrix.
    pub fn queries<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &ParameterSet<T>,
        semantic: Option<&Tensor<T>>,
        n_sources: usize,
    ) -> Result<Var, FusionError> {
        match self.source {
            QuerySource::Semantic => {
                let e = semantic.ok_or(FusionError::MissingQueries)?;
                if e.rows() != n_sources || e.cols() != self.d_llm {
                    return Err(FusionError::Dimension(format!(
                        "semantic queries {}x{}, expected {}x{}",
                        e.rows(),
                        e.cols(),
                        n_sources,
                        self.d_llm
                    )));
                }
                let ev = tape.leaf(e.clone())?;
                let wq = tape.param(params, &self.wq_name())?;
                Ok(tape.matmul(ev, wq)?)
            }
            QuerySource::Free => {
                if n_sources != self.n_sources {
                    return Err(FusionError::Dimension(format!(
                        "{} sources for {} free queries",
                        n_sources, self.n_sources
                    )));
                }
                Ok(tape.param(params, &self.free_name())?)
            }
        }
    }
}

/// Attention result on the tape: fused `n x d` and weights `n x N`.
#[derive(Debug, Clone, Copy)]
pub struct Attended {
    pub fused: Var,
    pub alpha: Var,
}

/// Records attention of `queries` (`N x d`) over `values` (N matrices of
/// `n x d`).
pub fn attend<T: Scalar>(
    tape: &mut Tape<T>,
    queries: Var,
    values: &[Var],
) -> Result<Attended, FusionError> {
    if values.is_empty() {
        return Err(FusionError::NoSources);
    }
    let q = tape.value(queries);
    let d = q.cols();
    if q.rows() != values.len() {
        return Err(FusionError::Dimension(format!(
            "{} queries for {} sources",
            q.rows(),
            values.len()
        )));
    }
    let n = tape.value(values[0]).rows();
    for &v in values {
        let t = tape.value(v);
        if t.rows() != n || t.cols() != d {
            return Err(FusionError::Dimension(format!(
                "source {}x{}, expected {}x{}",
                t.rows(),
                t.cols(),
                n,
                d
            )));
        }
    }
    let scale = T::one() / T::from_usize_lossy(d).sqrt();
    let mut logits = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        let qi = tape.gather_rows(queries, Rc::new(vec![i]))?;
        logits.push(tape.scaled_dot(v, qi, scale)?);
    }
    let stacked = tape.concat_cols(&logits)?;
    let alpha = tape.row_softmax(stacked)?;
    let mut parts = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        let a = tape.col(alpha, i)?;
        parts.push(tape.mul_rows(v, a)?);
    }
    let fused = tape.add_all(&parts)?;
    Ok(Attended { fused, alpha })
}

/// Fused embeddings and attention weights as plain tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput<T> {
    pub fused: Tensor<T>,
    /// `n x N`; row `j` holds the weights of region `j` over the sources.
    pub alpha: Tensor<T>,
}

/// Semantic-query fusion of per-source region embeddings.
pub fn fuse<T: Scalar>(
    queries: &Tensor<T>,
    attn: &AttentionParams,
    params: &ParameterSet<T>,
    values: &[Tensor<T>],
) -> Result<FusionOutput<T>, FusionError> {
    if values.is_empty() {
        return Err(FusionError::NoSources);
    }
    let mut tape = Tape::new();
    let q = attn.queries(&mut tape, params, Some(queries), values.len())?;
    let vs = values
        .iter()
        .map(|v| tape.leaf(v.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let out = attend(&mut tape, q, &vs)?;
    Ok(FusionOutput {
        fused: tape.value(out.fused).clone(),
        alpha: tape.value(out.alpha).clone(),
    })
}

/// `current + fuse(task_queries, others)`; the identity when there are no
/// other tasks.
pub fn fuse_cross_task<T: Scalar>(
    task_queries: &Tensor<T>,
    attn: &AttentionParams,
    params: &ParameterSet<T>,
    others: &[Tensor<T>],
    current: &Tensor<T>,
) -> Result<FusionOutput<T>, FusionError> {
    if others.is_empty() {
        return Ok(FusionOutput {
            fused: current.clone(),
            alpha: Tensor::zeros(current.rows(), 0),
        });
    }
    let mut out = fuse(task_queries, attn, params, others)?;
    if !out.fused.same_shape(current) {
        return Err(FusionError::Dimension(
            "current embeddings misaligned with other tasks".into(),
        ));
    }
    out.fused.add_assign(current);
    Ok(out)
}
