//! The predictor: a global encoder over the whole graph, one encoder per
//! meta-path sub-KG, attention fusion of the per-path region embeddings with
//! a residual onto the global ones, optional cross-task fusion of region
//! embeddings saved by other tasks, and an MLP head.

use std::rc::Rc;

use rand_distr::{Distribution, Normal};

use crate::fusion::{attend, AttentionParams, EmbeddingProvider, SemanticEmbedding, EMBED_DIM};
use crate::kg::{EntityType, KnowledgeGraph};
use crate::metapath::{extract_subkg, MetaPathSchema};
use crate::numerics::{Gradients, ParameterSet, Tape, Tensor, Var};
use crate::rgcn::{GraphView, PreparedGraph, RgcnEncoder};
use crate::util::stage_rng;

use super::{ModelError, SlakConfig};

pub const EMBEDDING_TABLE: &str = "emb";
pub const MLP_W1: &str = "mlp/W1";
pub const MLP_B1: &str = "mlp/b1";
pub const MLP_W2: &str = "mlp/W2";
pub const MLP_B2: &str = "mlp/b2";

/// Region embeddings saved by other tasks and the semantic embeddings of
/// those tasks' descriptions, row-aligned.
#[derive(Debug, Clone)]
pub struct CrossTaskInputs {
    pub tasks: Vec<String>,
    pub queries: Tensor<f64>,
    pub embeddings: Vec<Tensor<f64>>,
}

/// Everything a forward pass reads besides the parameters.
pub struct TaskInputs {
    pub region_ids: Vec<String>,
    pub metapaths: Vec<MetaPathSchema>,
    pub subkg_sizes: Vec<usize>,
    global: PreparedGraph<f64>,
    global_regions: Rc<Vec<usize>>,
    subs: Vec<(PreparedGraph<f64>, Rc<Vec<usize>>)>,
    pub metapath_queries: Tensor<f64>,
    pub cross: Option<CrossTaskInputs>,
    pub entity_types: Vec<EntityType>,
    global_relations: Vec<usize>,
    sub_relations: Vec<Vec<usize>>,
}

fn region_rows(view: &GraphView, regions: &[usize]) -> Rc<Vec<usize>> {
    Rc::new(
        regions
            .iter()
            .map(|&r| view.local_index(r).expect("views contain every region"))
            .collect(),
    )
}

impl TaskInputs {
    /// Extracts one sub-KG per meta-path and embeds the path sentences.
    pub fn prepare(
        kg: &KnowledgeGraph,
        metapaths: &[MetaPathSchema],
        config: &SlakConfig,
        provider: &EmbeddingProvider,
        cross: Option<CrossTaskInputs>,
    ) -> Result<Self, ModelError> {
        if metapaths.is_empty() {
            return Err(ModelError::Config(
                "a task needs at least one meta-path".into(),
            ));
        }
        let regions = kg.entities_of_type(EntityType::Region);
        if regions.is_empty() {
            return Err(ModelError::Misaligned("graph has no regions".into()));
        }
        if let Some(c) = &cross {
            check_cross(c, regions.len(), config.d_h)?;
        }
        let gview = GraphView::full(kg);
        let global_regions = region_rows(&gview, &regions);
        let global_relations = gview.relations();
        let global = PreparedGraph::new(gview, config.global_normalization);
        let mut subs = Vec::new();
        let mut sub_relations = Vec::new();
        let mut subkg_sizes = Vec::new();
        for mp in metapaths {
            mp.validate(kg.schema())?;
            let sub = extract_subkg(kg, mp);
            subkg_sizes.push(sub.len());
            let view = GraphView::from_subkg(kg, &sub);
            let rows = region_rows(&view, &regions);
            sub_relations.push(view.relations());
            subs.push((PreparedGraph::new(view, config.normalization), rows));
        }
        let sentences: Vec<String> = metapaths
            .iter()
            .map(MetaPathSchema::to_natural_language)
            .collect();
        let refs: Vec<&str> = sentences.iter().map(String::as_str).collect();
        let metapath_queries = crate::fusion::stack(&provider.embed_batch(&refs)?);
        Ok(TaskInputs {
            region_ids: kg.region_ids(),
            metapaths: metapaths.to_vec(),
            subkg_sizes,
            global,
            global_regions,
            subs,
            metapath_queries,
            cross,
            entity_types: kg.entities().iter().map(|e| e.etype).collect(),
            global_relations,
            sub_relations,
        })
    }

    pub fn num_regions(&self) -> usize {
        self.region_ids.len()
    }

    /// Replaces every other-task embedding with zeros.
    pub fn zero_cross(&mut self) {
        if let Some(c) = &mut self.cross {
            for e in &mut c.embeddings {
                *e = Tensor::zeros(e.rows(), e.cols());
            }
        }
    }
}

fn check_cross(c: &CrossTaskInputs, n_regions: usize, d_h: usize) -> Result<(), ModelError> {
    if c.embeddings.is_empty()
        || c.embeddings.len() != c.tasks.len()
        || c.queries.rows() != c.tasks.len()
    {
        return Err(ModelError::Misaligned(format!(
            "{} task queries, {} saved embeddings, {} task names",
            c.queries.rows(),
            c.embeddings.len(),
            c.tasks.len()
        )));
    }
    if c.queries.cols() != EMBED_DIM {
        return Err(ModelError::Misaligned(format!(
            "task queries are {} wide",
            c.queries.cols()
        )));
    }
    for (t, e) in c.tasks.iter().zip(&c.embeddings) {
        if e.rows() != n_regions || e.cols() != d_h {
            return Err(ModelError::Misaligned(format!(
                "saved embeddings of `{t}` are {}x{}, expected {n_regions}x{d_h}",
                e.rows(),
                e.cols()
            )));
        }
    }
    Ok(())
}

/// Task description sentences embedded as cross-task queries.
pub fn task_queries(
    provider: &EmbeddingProvider,
    descriptions: &[&str],
) -> Result<Tensor<f64>, ModelError> {
    let e: Vec<SemanticEmbedding> = provider.embed_batch(descriptions)?;
    Ok(crate::fusion::stack(&e))
}

/// Row `i` is a vector shared by every entity of the type of entity `i`
/// (standard deviation `type_std`) plus an own part (standard deviation
/// `embed_std`). Entities nobody trained on then still start alike, so sums
/// over neighbors reflect how many there are.
pub fn initial_embeddings(
    entity_types: &[EntityType],
    d: usize,
    embed_std: f64,
    type_std: f64,
    seed: u64,
) -> Result<Tensor<f64>, ModelError> {
    let own = Normal::new(0.0, embed_std).map_err(|e| ModelError::Config(e.to_string()))?;
    let shared = Normal::new(0.0, type_std).map_err(|e| ModelError::Config(e.to_string()))?;
    let mut trng = stage_rng(seed, "init/emb/types");
    let type_rows: Vec<Vec<f64>> = EntityType::ALL
        .iter()
        .map(|_| (0..d).map(|_| shared.sample(&mut trng)).collect())
        .collect();
    let mut rng = stage_rng(seed, "init/emb");
    let mut data = Vec::with_capacity(entity_types.len() * d);
    for t in entity_types {
        let base = &type_rows[EntityType::ALL
            .iter()
            .position(|x| x == t)
            .expect("closed type set")];
        data.extend(base.iter().map(|b| b + own.sample(&mut rng)));
    }
    Ok(Tensor::matrix(entity_types.len(), d, data)?)
}

/// Architecture of one task's model; parameters live in a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct SlakModel {
    pub config: SlakConfig,
    pub global: RgcnEncoder,
    pub subs: Vec<RgcnEncoder>,
    pub metapath_attention: AttentionParams,
    /// Present when other-task embeddings are fused.
    pub task_attention: Option<AttentionParams>,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub global: Var,
    pub e_reg: Var,
    pub e_fused: Var,
    pub metapath_alpha: Var,
    pub task_alpha: Option<Var>,
    pub prediction: Var,
}

/// Plain-tensor results of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub e_reg: Tensor<f64>,
    pub e_fused: Tensor<f64>,
    pub metapath_alpha: Tensor<f64>,
    pub task_alpha: Option<Tensor<f64>>,
    /// `n_regions x 1`, in transformed target units.
    pub prediction: Tensor<f64>,
}

impl SlakModel {
    pub fn new(config: &SlakConfig, inputs: &TaskInputs) -> Self {
        let d = config.d_h;
        let global = RgcnEncoder::new(
            "global",
            EMBEDDING_TABLE,
            d,
            config.layers,
            &inputs.global_relations,
            config.global_normalization,
        );
        let subs = inputs
            .sub_relations
            .iter()
            .enumerate()
            .map(|(k, rels)| {
                RgcnEncoder::new(
                    &format!("sub{k}"),
                    EMBEDDING_TABLE,
                    d,
                    config.layers,
                    rels,
                    config.normalization,
                )
            })
            .collect();
        let n_paths = inputs.metapaths.len();
        let metapath_attention = if config.no_attn {
            AttentionParams::free("attn_mp", d, n_paths)
        } else {
            AttentionParams::semantic("attn_mp", d)
        };
        let task_attention = match &inputs.cross {
            Some(c) if !config.no_trans => Some(if config.no_attn {
                AttentionParams::free("attn_task", d, c.tasks.len())
            } else {
                AttentionParams::semantic("attn_task", d)
            }),
            _ => None,
        };
        SlakModel {
            config: config.clone(),
            global,
            subs,
            metapath_attention,
            task_attention,
        }
    }

    /// Fresh parameters. Every component draws from its own stage stream,
    /// so adding or removing one leaves the others' initial values intact.
    pub fn init_params(
        &self,
        entity_types: &[EntityType],
    ) -> Result<ParameterSet<f64>, ModelError> {
        let seed = self.config.seed;
        let d = self.config.d_h;
        let mut p = ParameterSet::new();
        p.insert(
            EMBEDDING_TABLE,
            initial_embeddings(
                entity_types,
                d,
                self.config.embed_std,
                self.config.type_std,
                seed,
            )?,
        )?;
        self.global
            .init_params(&mut p, &mut stage_rng(seed, "init/global"))?;
        for (k, s) in self.subs.iter().enumerate() {
            s.init_params(&mut p, &mut stage_rng(seed, &format!("init/sub{k}")))?;
        }
        self.metapath_attention
            .init_params(&mut p, &mut stage_rng(seed, "init/attn_mp"))?;
        if let Some(t) = &self.task_attention {
            t.init_params(&mut p, &mut stage_rng(seed, "init/attn_task"))?;
        }
        let mut rng = stage_rng(seed, "init/mlp");
        p.insert_glorot(MLP_W1, d, d, &mut rng)?;
        p.insert(MLP_B1, Tensor::zeros(1, d))?;
        p.insert_glorot(MLP_W2, d, 1, &mut rng)?;
        p.insert(MLP_B2, Tensor::zeros(1, 1))?;
        Ok(p)
    }

    /// Records the forward pass for all regions.
    pub fn forward_tape(
        &self,
        tape: &mut Tape<f64>,
        params: &ParameterSet<f64>,
        inputs: &TaskInputs,
    ) -> Result<ForwardVars, ModelError> {
        if inputs.subs.len() != self.subs.len() {
            return Err(ModelError::Misaligned(format!(
                "{} sub-KGs for {} sub-encoders",
                inputs.subs.len(),
                self.subs.len()
            )));
        }
        let h = self.global.encode(tape, params, &inputs.global)?;
        let g = tape.gather_rows(h, inputs.global_regions.clone())?;
        let mut values = Vec::with_capacity(self.subs.len());
        for (enc, (graph, rows)) in self.subs.iter().zip(&inputs.subs) {
            let s = enc.encode(tape, params, graph)?;
            values.push(tape.gather_rows(s, rows.clone())?);
        }
        tape.set_scope("attn_mp");
        let q = self.metapath_attention.queries(
            tape,
            params,
            Some(&inputs.metapath_queries),
            values.len(),
        )?;
        let mp = attend(tape, q, &values)?;
        let e_reg = tape.add(g, mp.fused)?;
        let (e_fused, task_alpha) = match (&self.task_attention, &inputs.cross) {
            (Some(attn), Some(cross)) => {
                tape.set_scope("attn_task");
                let others = cross
                    .embeddings
                    .iter()
                    .map(|e| tape.leaf(e.clone()))
                    .collect::<Result<Vec<_>, _>>()?;
                let q = attn.queries(tape, params, Some(&cross.queries), others.len())?;
                let t = attend(tape, q, &others)?;
                (tape.add(e_reg, t.fused)?, Some(t.alpha))
            }
            _ => (e_reg, None),
        };
        tape.set_scope("mlp");
        let w1 = tape.param(params, MLP_W1)?;
        let b1 = tape.param(params, MLP_B1)?;
        let w2 = tape.param(params, MLP_W2)?;
        let b2 = tape.param(params, MLP_B2)?;
        let z = tape.matmul(e_fused, w1)?;
        let z = tape.add_row(z, b1)?;
        let z = tape.relu(z)?;
        let y = tape.matmul(z, w2)?;
        let prediction = tape.add_row(y, b2)?;
        tape.set_scope("");
        Ok(ForwardVars {
            global: g,
            e_reg,
            e_fused,
            metapath_alpha: mp.alpha,
            task_alpha,
            prediction,
        })
    }

    pub fn forward(
        &self,
        params: &ParameterSet<f64>,
        inputs: &TaskInputs,
    ) -> Result<ForwardOutput, ModelError> {
        let mut tape = Tape::new();
        let v = self.forward_tape(&mut tape, params, inputs)?;
        Ok(collect(&tape, &v))
    }

    /// MSE over `rows` against transformed `targets` (one per row), with the
    /// parameter gradients.
    pub fn loss_and_grads(
        &self,
        params: &ParameterSet<f64>,
        inputs: &TaskInputs,
        rows: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Gradients<f64>), ModelError> {
        let mut tape = Tape::new();
        let v = self.forward_tape(&mut tape, params, inputs)?;
        let (loss, _) = self.loss_on(&mut tape, v.prediction, rows, targets)?;
        let value = tape.value(loss).get(0, 0);
        Ok((value, tape.backward(loss)?))
    }

    pub(crate) fn loss_on(
        &self,
        tape: &mut Tape<f64>,
        prediction: Var,
        rows: &[usize],
        targets: &[f64],
    ) -> Result<(Var, Var), ModelError> {
        if rows.len() != targets.len() {
            return Err(ModelError::Misaligned(format!(
                "{} rows for {} targets",
                rows.len(),
                targets.len()
            )));
        }
        let picked = tape.gather_rows(prediction, Rc::new(rows.to_vec()))?;
        let loss = tape.mse(picked, Rc::new(Tensor::column(targets.to_vec())))?;
        Ok((loss, picked))
    }
}

pub(crate) fn collect(tape: &Tape<f64>, v: &ForwardVars) -> ForwardOutput {
    ForwardOutput {
        e_reg: tape.value(v.e_reg).clone(),
        e_fused: tape.value(v.e_fused).clone(),
        metapath_alpha: tape.value(v.metapath_alpha).clone(),
        task_alpha: v.task_alpha.map(|a| tape.value(a).clone()),
        prediction: tape.value(v.prediction).clone(),
    }
}
