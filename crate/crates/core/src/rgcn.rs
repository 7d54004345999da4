//! Relational graph convolution.
//!
//! One layer computes, for every node `i`,
//!
//! ```text
//! h_i' = relu( sum_r sum_{j in N_i^r} c_ir * W_r h_j  +  W_0 h_i )
//! ```
//!
//! where `N_i^r` are the forward neighbors of `i` along relation `r` (tails of
//! facts with head `i`) and `c_ir` is `1` (`Normalization::None`) or
//! `1 / |N_i^r|` (`Normalization::Mean`).
//!
//! Rows are stored as `h W` (row vectors), so `W_r` is `d_in x d_out`.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kg::{EntityType, KnowledgeGraph, Triple};
use crate::metapath::SubKg;
use crate::numerics::{NumericsError, ParameterSet, SparseMatrix, Tape, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    None,
    #[default]
    Mean,
}

/// The node set and typed edges an encoder runs over. Node `k` reads row
/// `nodes[k]` of the shared entity embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphView {
    nodes: Vec<usize>,
    local: HashMap<usize, usize>,
    edges: BTreeMap<usize, Vec<(usize, usize)>>,
}

impl GraphView {
    /// Builds a view from table rows and `(relation, head, tail)` edges given
    /// in table-row terms. Every edge endpoint must be listed in `nodes`.
    pub fn new(nodes: Vec<usize>, triples: impl IntoIterator<Item = Triple>) -> Self {
        let local: HashMap<usize, usize> = nodes.iter().enumerate().map(|(k, &g)| (g, k)).collect();
        let mut edges: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for t in triples {
            let h = *local.get(&t.head).expect("edge head outside view");
            let tl = *local.get(&t.tail).expect("edge tail outside view");
            edges.entry(t.relation).or_default().push((h, tl));
        }
        for list in edges.values_mut() {
            list.sort_unstable();
            list.dedup();
        }
        GraphView {
            nodes,
            local,
            edges,
        }
    }

    /// Whole graph, nodes in entity storage order.
    pub fn full(kg: &KnowledgeGraph) -> Self {
        Self::new(
            (0..kg.num_entities()).collect(),
            kg.triples().iter().copied(),
        )
    }

    /// A sub-KG plus every region of `kg`, so each region gets a row even
    /// when no instance touches it.
    pub fn from_subkg(kg: &KnowledgeGraph, sub: &SubKg) -> Self {
        let mut nodes: Vec<usize> = sub.entities().to_vec();
        nodes.extend(kg.entities_of_type(EntityType::Region));
        nodes.sort_unstable();
        nodes.dedup();
        Self::new(nodes, sub.facts().iter().copied())
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn local_index(&self, table_row: usize) -> Option<usize> {
        self.local.get(&table_row).copied()
    }

    /// Relations with at least one edge, ascending.
    pub fn relations(&self) -> Vec<usize> {
        self.edges.keys().copied().collect()
    }

    /// Local `(head, tail)` pairs of one relation.
    pub fn edges(&self, relation: usize) -> &[(usize, usize)] {
        self.edges.get(&relation).map_or(&[], Vec::as_slice)
    }
}

/// Distinct tail rows of one relation and its aggregation matrix.
type RelationOp<T> = (Rc<Vec<usize>>, Rc<SparseMatrix<T>>);

/// Per-relation aggregation operators for one view and normalization.
#[derive(Debug, Clone)]
pub struct PreparedGraph<T> {
    view: GraphView,
    node_index: Rc<Vec<usize>>,
    /// relation -> (distinct tail rows, n x |tails| aggregation matrix)
    ops: BTreeMap<usize, RelationOp<T>>,
}

impl<T: Scalar> PreparedGraph<T> {
    pub fn new(view: GraphView, normalization: Normalization) -> Self {
        let n = view.num_nodes();
        let mut ops = BTreeMap::new();
        for (&r, pairs) in &view.edges {
            let mut tails: Vec<usize> = pairs.iter().map(|&(_, t)| t).collect();
            tails.sort_unstable();
            tails.dedup();
            let col: HashMap<usize, usize> =
                tails.iter().enumerate().map(|(k, &t)| (t, k)).collect();
            let mut degree = vec![0usize; n];
            for &(h, _) in pairs {
                degree[h] += 1;
            }
            let entries = pairs
                .iter()
                .map(|&(h, t)| {
                    let c = match normalization {
                        Normalization::None => T::one(),
                        Normalization::Mean => T::one() / T::from_usize_lossy(degree[h]),
                    };
                    (h, col[&t], c)
                })
                .collect();
            ops.insert(
                r,
                (
                    Rc::new(tails.clone()),
                    Rc::new(SparseMatrix::from_triplets(n, tails.len(), entries)),
                ),
            );
        }
        let node_index = Rc::new(view.nodes.clone());
        PreparedGraph {
            view,
            node_index,
            ops,
        }
    }

    pub fn view(&self) -> &GraphView {
        &self.view
    }
}

/// One relational convolution layer; weights live in a [`ParameterSet`]
/// under `"{prefix}/W_{relation}"` and `"{prefix}/W0"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgcnLayer {
    pub prefix: String,
    pub d_in: usize,
    pub d_out: usize,
    /// Relation indices with a weight, ascending; fixed at construction.
    pub relations: Vec<usize>,
    pub normalization: Normalization,
}

impl RgcnLayer {
    pub fn new(
        prefix: impl Into<String>,
        d_in: usize,
        d_out: usize,
        relations: Vec<usize>,
        normalization: Normalization,
    ) -> Self {
        let mut relations = relations;
        relations.sort_unstable();
        relations.dedup();
        RgcnLayer {
            prefix: prefix.into(),
            d_in,
            d_out,
            relations,
            normalization,
        }
    }

    pub fn relation_param(&self, relation: usize) -> String {
        format!("{}/W_r{}", self.prefix, relation)
    }

    pub fn self_param(&self) -> String {
        format!("{}/W0", self.prefix)
    }

    pub fn init_params<T: Scalar, R: Rng + ?Sized>(
        &self,
        params: &mut ParameterSet<T>,
        rng: &mut R,
    ) -> Result<(), NumericsError> {
        params.insert_glorot(&self.self_param(), self.d_in, self.d_out, rng)?;
        for &r in &self.relations {
            params.insert_glorot(&self.relation_param(r), self.d_in, self.d_out, rng)?;
        }
        Ok(())
    }

    /// Records one layer on `tape`. `input` is `|nodes| x d_in`, row-aligned
    /// with `graph`. Relations of the graph without a weight in this layer are
    /// ignored.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &ParameterSet<T>,
        graph: &PreparedGraph<T>,
        input: Var,
    ) -> Result<Var, NumericsError> {
        let x = tape.value(input);
        if x.cols() != self.d_in || x.rows() != graph.view.num_nodes() {
            return Err(NumericsError::Shape {
                op: format!("{}/input", self.prefix),
                detail: format!(
                    "expected {}x{}, got {}x{}",
                    graph.view.num_nodes(),
                    self.d_in,
                    x.rows(),
                    x.cols()
                ),
            });
        }
        let w0 = tape.param(params, &self.self_param())?;
        let mut terms = vec![tape.matmul(input, w0)?];
        for (&r, (tails, agg)) in &graph.ops {
            if self.relations.binary_search(&r).is_err() {
                continue;
            }
            let wr = tape.param(params, &self.relation_param(r))?;
            let src = tape.gather_rows(input, tails.clone())?;
            let msg = tape.matmul(src, wr)?;
            terms.push(tape.spmm(agg.clone(), msg)?);
        }
        let pre = tape.add_all(&terms)?;
        tape.relu(pre)
    }
}

/// A stack of layers reading initial rows from a shared embedding table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgcnEncoder {
    pub table: String,
    pub layers: Vec<RgcnLayer>,
}

impl RgcnEncoder {
    /// `num_layers` layers of width `dim` over `relations`, named under
    /// `"{prefix}/l{k}"`.
    pub fn new(
        prefix: &str,
        table: &str,
        dim: usize,
        num_layers: usize,
        relations: &[usize],
        normalization: Normalization,
    ) -> Self {
        assert!(num_layers >= 1, "an encoder needs at least one layer");
        let layers = (0..num_layers)
            .map(|k| {
                RgcnLayer::new(
                    format!("{prefix}/l{k}"),
                    dim,
                    dim,
                    relations.to_vec(),
                    normalization,
                )
            })
            .collect();
        RgcnEncoder {
            table: table.to_string(),
            layers,
        }
    }

    pub fn init_params<T: Scalar, R: Rng + ?Sized>(
        &self,
        params: &mut ParameterSet<T>,
        rng: &mut R,
    ) -> Result<(), NumericsError> {
        for l in &self.layers {
            l.init_params(params, rng)?;
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.d_out)
    }

    /// Encodes every node of `graph`; returns `|nodes| x d_out`.
    pub fn encode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &ParameterSet<T>,
        graph: &PreparedGraph<T>,
    ) -> Result<Var, NumericsError> {
        let table = tape.param(params, &self.table)?;
        let rows = tape.value(table).rows();
        if let Some(&bad) = graph.node_index.iter().find(|&&i| i >= rows) {
            return Err(NumericsError::Shape {
                op: format!("{}/lookup", self.table),
                detail: format!("entity row {bad} missing from a {rows}-row table"),
            });
        }
        let mut h = tape.gather_rows(table, graph.node_index.clone())?;
        for layer in &self.layers {
            tape.set_scope(layer.prefix.clone());
            h = layer.forward(tape, params, graph, h)?;
        }
        tape.set_scope("");
        Ok(h)
    }
}

/// Runs a single layer outside of training.
pub fn layer_forward<T: Scalar>(
    layer: &RgcnLayer,
    params: &ParameterSet<T>,
    graph: &PreparedGraph<T>,
    embeddings: &Tensor<T>,
) -> Result<Tensor<T>, NumericsError> {
    let mut tape = Tape::new();
    let x = tape.leaf(embeddings.clone())?;
    let y = layer.forward(&mut tape, params, graph, x)?;
    Ok(tape.value(y).clone())
}

/// Encodes a graph outside of training.
pub fn encode<T: Scalar>(
    encoder: &RgcnEncoder,
    params: &ParameterSet<T>,
    graph: &PreparedGraph<T>,
) -> Result<Tensor<T>, NumericsError> {
    let mut tape = Tape::new();
    let h = encoder.encode(&mut tape, params, graph)?;
    Ok(tape.value(h).clone())
}
