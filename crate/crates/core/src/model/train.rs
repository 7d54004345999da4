use serde::{Deserialize, Serialize};

use crate::dataio::{metrics, split, Metrics, RegionIndicatorTable, Split, SplitSpec};
use crate::fusion::EmbeddingProvider;
use crate::kg::KnowledgeGraph;
use crate::metapath::MetaPathSchema;
use crate::numerics::{
    adam_step, AdamConfig, AdamState, NumericsError, ParameterSet, Tape, Tensor,
};

use super::net::{collect, task_queries, CrossTaskInputs, ForwardOutput, SlakModel, TaskInputs};
use super::{FittedTransform, ModelError, SlakConfig};

/// One indicator prediction task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskContext {
    pub indicator: String,
    pub description: String,
    pub metapaths: Vec<MetaPathSchema>,
    /// Region embeddings saved after this task's round-1 training.
    pub saved_embeddings: Option<Tensor<f64>>,
}

impl TaskContext {
    pub fn new(indicator: &str, description: &str, metapaths: Vec<MetaPathSchema>) -> Self {
        TaskContext {
            indicator: indicator.to_string(),
            description: description.to_string(),
            metapaths,
            saved_embeddings: None,
        }
    }
}

/// Original-unit targets of one indicator for every region, with the split.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTargets {
    pub regions: Vec<String>,
    pub values: Vec<f64>,
    pub split: Split,
}

impl TaskTargets {
    /// Targets for the regions of `kg` in storage order.
    pub fn from_table(
        kg: &KnowledgeGraph,
        table: &RegionIndicatorTable,
        indicator: &str,
        spec: &SplitSpec,
    ) -> Result<Self, ModelError> {
        let regions = kg.region_ids();
        let values = table.values_for(indicator, &regions)?;
        let split = split(regions.len(), spec)?;
        Ok(TaskTargets {
            regions,
            values,
            split,
        })
    }

    fn pick(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&i| self.values[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub train: Metrics<f64>,
    pub val: Metrics<f64>,
    pub test: Metrics<f64>,
}

/// A trained task model restored to its best validation epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub indicator: String,
    pub model: SlakModel,
    pub params: ParameterSet<f64>,
    pub transform: FittedTransform,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub history: Vec<EpochRecord>,
    pub metrics: SplitMetrics,
    /// Original-unit predictions for every region.
    pub predictions: Vec<f64>,
    /// Best-epoch forward pass; `e_fused` is the saved region embedding.
    pub best: ForwardOutput,
}

impl TrainOutcome {
    pub fn embeddings(&self) -> &Tensor<f64> {
        &self.best.e_fused
    }

    /// Lowest validation MSE seen.
    pub fn best_val_mse(&self) -> f64 {
        self.history[self.best_epoch].val_mse
    }
}

fn diverged(epoch: usize) -> impl Fn(ModelError) -> ModelError {
    move |e| match e {
        ModelError::Numerics(src @ NumericsError::NonFinite { .. }) => {
            ModelError::Diverged { epoch, source: src }
        }
        other => other,
    }
}

fn mse_rows(pred: &Tensor<f64>, rows: &[usize], z: &[f64]) -> f64 {
    rows.iter()
        .map(|&i| (pred.get(i, 0) - z[i]).powi(2))
        .sum::<f64>()
        / rows.len() as f64
}

/// Full-batch Adam on the training regions with early stopping on
/// validation MSE; parameters are restored to the best epoch.
pub fn fit(
    model: &SlakModel,
    inputs: &TaskInputs,
    targets: &TaskTargets,
    indicator: &str,
) -> Result<TrainOutcome, ModelError> {
    let config = &model.config;
    if targets.regions != inputs.region_ids {
        return Err(ModelError::Misaligned(
            "targets and inputs list different regions".into(),
        ));
    }
    let s = &targets.split;
    if s.train.is_empty() || s.val.is_empty() {
        return Err(ModelError::Misaligned(
            "empty training or validation split".into(),
        ));
    }
    let transform = FittedTransform::fit(config.transform_for(indicator), &targets.pick(&s.train))?;
    let z: Vec<f64> = targets
        .values
        .iter()
        .map(|&y| transform.forward(y))
        .collect();
    let z_train: Vec<f64> = s.train.iter().map(|&i| z[i]).collect();

    let mut params = model.init_params(&inputs.entity_types)?;
    let mut adam = AdamState::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut history = Vec::new();
    let mut best: Option<(usize, ParameterSet<f64>, ForwardOutput)> = None;
    for epoch in 0..config.max_epochs {
        let mut tape = Tape::new();
        let v = model
            .forward_tape(&mut tape, &params, inputs)
            .map_err(diverged(epoch))?;
        let (loss, _) = model
            .loss_on(&mut tape, v.prediction, &s.train, &z_train)
            .map_err(diverged(epoch))?;
        let train_mse = tape.value(loss).get(0, 0);
        let val_mse = mse_rows(tape.value(v.prediction), &s.val, &z);
        history.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
        });
        let improved = best
            .as_ref()
            .is_none_or(|(e, _, _)| val_mse < history[*e].val_mse);
        if improved {
            best = Some((epoch, params.clone(), collect(&tape, &v)));
        } else if epoch - best.as_ref().map_or(0, |b| b.0) >= config.patience {
            break;
        }
        let grads = tape.backward(loss).map_err(|e| diverged(epoch)(e.into()))?;
        params.zero_grad();
        params.accumulate(&grads)?;
        adam_step(&mut params, &mut adam)?;
    }
    let (best_epoch, params, best) = best.expect("at least one epoch runs");
    let predictions: Vec<f64> = (0..targets.values.len())
        .map(|i| transform.inverse(best.prediction.get(i, 0)))
        .collect();
    let split_metrics = |rows: &[usize]| -> Result<Metrics<f64>, ModelError> {
        let p: Vec<f64> = rows.iter().map(|&i| predictions[i]).collect();
        Ok(metrics(&p, &targets.pick(rows))?)
    };
    let metrics = SplitMetrics {
        train: split_metrics(&s.train)?,
        val: split_metrics(&s.val)?,
        test: split_metrics(&s.test)?,
    };
    Ok(TrainOutcome {
        indicator: indicator.to_string(),
        model: model.clone(),
        params,
        transform,
        best_epoch,
        epochs_run: history.len(),
        history,
        metrics,
        predictions,
        best,
    })
}

/// Round-1 training of one task with its own meta-paths and no transfer.
pub fn train_single(
    task: &TaskContext,
    kg: &KnowledgeGraph,
    targets: &TaskTargets,
    config: &SlakConfig,
    provider: &EmbeddingProvider,
) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    let inputs = TaskInputs::prepare(kg, &task.metapaths, config, provider, None)?;
    let model = SlakModel::new(config, &inputs);
    fit(&model, &inputs, targets, &task.indicator)
}

/// Cross-task inputs for task `i`: saved embeddings and description queries
/// of every other task. `None` for a single task.
pub fn cross_inputs(
    tasks: &[TaskContext],
    i: usize,
    provider: &EmbeddingProvider,
) -> Result<Option<CrossTaskInputs>, ModelError> {
    let others: Vec<&TaskContext> = tasks
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, t)| t)
        .collect();
    if others.is_empty() {
        return Ok(None);
    }
    let mut embeddings = Vec::new();
    for t in &others {
        let e = t
            .saved_embeddings
            .as_ref()
            .ok_or_else(|| ModelError::MissingEmbeddings(t.indicator.clone()))?;
        embeddings.push(e.clone());
    }
    let descriptions: Vec<&str> = others.iter().map(|t| t.description.as_str()).collect();
    Ok(Some(CrossTaskInputs {
        tasks: others.iter().map(|t| t.indicator.clone()).collect(),
        queries: task_queries(provider, &descriptions)?,
        embeddings,
    }))
}

/// Round-2 training of task `i` of `tasks`, whose `metapaths` already hold
/// the communicated sets.
pub fn train_round2_task(
    tasks: &[TaskContext],
    i: usize,
    kg: &KnowledgeGraph,
    targets: &TaskTargets,
    config: &SlakConfig,
    provider: &EmbeddingProvider,
) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    let cross = if config.no_trans {
        None
    } else {
        cross_inputs(tasks, i, provider)?
    };
    let inputs = TaskInputs::prepare(kg, &tasks[i].metapaths, config, provider, cross)?;
    let model = SlakModel::new(config, &inputs);
    fit(&model, &inputs, targets, &tasks[i].indicator)
}

/// Round 2 for every task, sequentially.
pub fn train_round2(
    tasks: &[TaskContext],
    kg: &KnowledgeGraph,
    targets: &[TaskTargets],
    config: &SlakConfig,
    provider: &EmbeddingProvider,
) -> Result<Vec<TrainOutcome>, ModelError> {
    if targets.len() != tasks.len() {
        return Err(ModelError::Misaligned(format!(
            "{} target sets for {} tasks",
            targets.len(),
            tasks.len()
        )));
    }
    for t in tasks {
        if t.saved_embeddings.is_none() && tasks.len() > 1 && !config.no_trans {
            return Err(ModelError::MissingEmbeddings(t.indicator.clone()));
        }
    }
    (0..tasks.len())
        .map(|i| train_round2_task(tasks, i, kg, &targets[i], config, provider))
        .collect()
}

/// Original-unit metrics of trained parameters on `rows`.
pub fn evaluate(
    outcome: &TrainOutcome,
    inputs: &TaskInputs,
    targets: &TaskTargets,
    rows: &[usize],
) -> Result<Metrics<f64>, ModelError> {
    let out = outcome.model.forward(&outcome.params, inputs)?;
    let pred: Vec<f64> = rows
        .iter()
        .map(|&i| outcome.transform.inverse(out.prediction.get(i, 0)))
        .collect();
    Ok(metrics(&pred, &targets.pick(rows))?)
}
