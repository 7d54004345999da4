mod common;

use regionkg::dataio::{generate_synthetic, SplitSpec, SyntheticDataset, SyntheticSpec};
use regionkg::fusion::EmbeddingProvider;
use regionkg::metapath::{parse_metapath, MetaPathSchema};
use regionkg::model::{
    cross_inputs, task_queries, train_single, CrossTaskInputs, SlakConfig, SlakModel, TaskContext,
    TaskInputs, TaskTargets,
};
use regionkg::numerics::{decode_checkpoint, encode_checkpoint, grad_check, Tensor};
use regionkg::rgcn::Normalization;

fn lite() -> SyntheticDataset {
    generate_synthetic(&SyntheticSpec::lite()).unwrap()
}

fn paths(ds: &SyntheticDataset) -> Vec<MetaPathSchema> {
    let s = ds.kg.schema();
    [
        "Region -[Has]-> POI -[Competitive]-> POI -[LocateAt]-> Region",
        "Region -[ServedBy]-> BusinessArea -[Contain]-> POI",
    ]
    .iter()
    .map(|p| parse_metapath(p, s).unwrap())
    .collect()
}

fn quick() -> SlakConfig {
    SlakConfig {
        max_epochs: 12,
        patience: 5,
        ..SlakConfig::default()
    }
}

#[test]
fn training_is_deterministic() {
    let ds = lite();
    let targets =
        TaskTargets::from_table(&ds.kg, &ds.table, "commercial", &SplitSpec::new(0)).unwrap();
    let task = TaskContext::new("commercial", "commercial activeness", paths(&ds));
    let provider = EmbeddingProvider::fallback();
    let a = train_single(&task, &ds.kg, &targets, &quick(), &provider).unwrap();
    let b = train_single(&task, &ds.kg, &targets, &quick(), &provider).unwrap();
    assert_eq!(a.predictions, b.predictions);
    assert_eq!(a.history, b.history);
    let other_seed = SlakConfig { seed: 1, ..quick() };
    let c = train_single(&task, &ds.kg, &targets, &other_seed, &provider).unwrap();
    assert_ne!(a.predictions, c.predictions);
}

#[test]
fn best_epoch_parameters_reproduce_reported_predictions() {
    let ds = lite();
    let targets = TaskTargets::from_table(&ds.kg, &ds.table, "rating", &SplitSpec::new(0)).unwrap();
    let task = TaskContext::new("rating", "average rating", paths(&ds));
    let provider = EmbeddingProvider::fallback();
    let out = train_single(&task, &ds.kg, &targets, &quick(), &provider).unwrap();
    let inputs = TaskInputs::prepare(&ds.kg, &task.metapaths, &quick(), &provider, None).unwrap();
    let restored = decode_checkpoint::<f64>(&encode_checkpoint(&out.params)).unwrap();
    let again = out.model.forward(&restored, &inputs).unwrap();
    assert_eq!(again, out.best);
    let best_val = out.history[out.best_epoch].val_mse;
    assert!(out.history.iter().all(|h| h.val_mse >= best_val));
}

#[test]
fn components_draw_from_independent_streams() {
    let ds = lite();
    let provider = EmbeddingProvider::fallback();
    let config = quick();
    let plain = TaskInputs::prepare(&ds.kg, &paths(&ds), &config, &provider, None).unwrap();
    let n = plain.num_regions();
    let cross = CrossTaskInputs {
        tasks: vec!["x".into()],
        queries: task_queries(&provider, &["x"]).unwrap(),
        embeddings: vec![Tensor::zeros(n, config.d_h)],
    };
    let with_cross =
        TaskInputs::prepare(&ds.kg, &paths(&ds), &config, &provider, Some(cross)).unwrap();
    let a = SlakModel::new(&config, &plain)
        .init_params(&plain.entity_types)
        .unwrap();
    let b = SlakModel::new(&config, &with_cross)
        .init_params(&with_cross.entity_types)
        .unwrap();
    for name in a.names() {
        assert_eq!(
            a.get(name),
            b.get(name),
            "{name} changed when task attention was added"
        );
    }
    assert!(b.names().any(|n| n.starts_with("attn_task/")));
    // zero other-task embeddings leave every output untouched
    let fa = SlakModel::new(&config, &plain).forward(&a, &plain).unwrap();
    let fb = SlakModel::new(&config, &with_cross)
        .forward(&b, &with_cross)
        .unwrap();
    assert_eq!(fa.prediction, fb.prediction);
    assert_eq!(fa.e_reg, fb.e_fused);
}

#[test]
fn gradients_check_under_ablations_and_mean_aggregation() {
    let kg = common::tiny_kg();
    let s = kg.schema();
    let mps = vec![
        parse_metapath("Region -[Has]-> POI -[Competitive]-> POI", s).unwrap(),
        parse_metapath("Region -[NearBy]-> Region", s).unwrap(),
        parse_metapath("Region -[Has]-> POI -[HasBrandOf]-> Brand", s).unwrap(),
    ];
    let provider = EmbeddingProvider::fallback();
    let config = SlakConfig {
        d_h: 3,
        layers: 2,
        no_attn: true,
        normalization: Normalization::Mean,
        seed: 5,
        ..SlakConfig::default()
    };
    let mut tasks = vec![
        TaskContext::new("a", "first", mps.clone()),
        TaskContext::new("b", "second", mps[..1].to_vec()),
        TaskContext::new("c", "third", mps[1..].to_vec()),
    ];
    for (k, t) in tasks.iter_mut().enumerate() {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|r| (0..3).map(|c| ((r * 3 + c + k) as f64).sin()).collect())
            .collect();
        t.saved_embeddings = Some(Tensor::from_rows(&rows));
    }
    let cross = cross_inputs(&tasks, 0, &provider).unwrap();
    let inputs = TaskInputs::prepare(&kg, &mps, &config, &provider, cross).unwrap();
    let model = SlakModel::new(&config, &inputs);
    let mut params = model.init_params(&inputs.entity_types).unwrap();
    assert!(params.names().any(|n| n == "attn_task/free_q"));
    let rows = [0, 1, 3];
    let targets = [1.0, -0.5, 0.25];
    let report = grad_check(
        &mut params,
        |p| {
            Ok(model
                .loss_and_grads(p, &inputs, &rows, &targets)
                .expect("forward pass"))
        },
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn metapath_attention_weights_cover_every_region() {
    let ds = lite();
    let provider = EmbeddingProvider::fallback();
    let config = quick();
    let inputs = TaskInputs::prepare(&ds.kg, &paths(&ds), &config, &provider, None).unwrap();
    let model = SlakModel::new(&config, &inputs);
    let params = model.init_params(&inputs.entity_types).unwrap();
    let out = model.forward(&params, &inputs).unwrap();
    assert_eq!(out.metapath_alpha.rows(), inputs.num_regions());
    assert_eq!(out.metapath_alpha.cols(), 2);
    assert!(out.task_alpha.is_none());
    assert_eq!(out.e_reg, out.e_fused);
}
