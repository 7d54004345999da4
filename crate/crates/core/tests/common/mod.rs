#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng;
use regionkg::kg::{EntityType, KnowledgeGraph, Schema, Triple};
use regionkg::metapath::MetaPathSchema;
use regionkg::numerics::{ParameterSet, Tensor};
use regionkg::rgcn::RgcnLayer;

/// Random typed graph over the default schema with at most `max_facts`
/// facts; every entity type gets between 1 and `per_type` entities.
pub fn random_kg<R: Rng>(rng: &mut R, per_type: usize, max_facts: usize) -> KnowledgeGraph {
    let schema = Arc::new(Schema::default_lbkg());
    let mut b = KnowledgeGraph::builder(schema.clone());
    let mut ids: Vec<Vec<String>> = Vec::new();
    for t in EntityType::ALL {
        let n = rng.random_range(1..=per_type);
        let mut v = Vec::new();
        for k in 0..n {
            let id = format!("{}:{k}", t.as_str().to_lowercase());
            b.add_entity(id.clone(), t).unwrap();
            v.push(id);
        }
        ids.push(v);
    }
    let type_ix = |t: EntityType| EntityType::ALL.iter().position(|&u| u == t).unwrap();
    let n_facts = rng.random_range(0..=max_facts);
    for _ in 0..n_facts {
        let r = &schema.relations()[rng.random_range(0..schema.len())];
        let hs = &ids[type_ix(r.head)];
        let ts = &ids[type_ix(r.tail)];
        let h = &hs[rng.random_range(0..hs.len())];
        let t = &ts[rng.random_range(0..ts.len())];
        b.add_fact(h, &r.name, t).unwrap();
    }
    b.build()
}

/// Every instance of `mp`, found by depth-first search over the raw fact
/// list. Sorted.
pub fn brute_force_instances(kg: &KnowledgeGraph, mp: &MetaPathSchema) -> Vec<Vec<usize>> {
    let schema = kg.schema();
    let rels: Vec<usize> = mp
        .hops()
        .iter()
        .map(|h| schema.relation_index(&h.relation).unwrap())
        .collect();
    let mut out = Vec::new();
    fn dfs(triples: &[Triple], rels: &[usize], path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let k = path.len() - 1;
        if k == rels.len() {
            out.push(path.clone());
            return;
        }
        let cur = *path.last().unwrap();
        for t in triples {
            if t.head == cur && t.relation == rels[k] {
                path.push(t.tail);
                dfs(triples, rels, path, out);
                path.pop();
            }
        }
    }
    for (i, e) in kg.entities().iter().enumerate() {
        if e.etype == mp.start() {
            dfs(kg.triples(), &rels, &mut vec![i], &mut out);
        }
    }
    out.sort();
    out
}

/// Facts lying on at least one instance.
pub fn instance_facts(
    kg: &KnowledgeGraph,
    mp: &MetaPathSchema,
    instances: &[Vec<usize>],
) -> BTreeSet<(usize, usize, usize)> {
    let schema = kg.schema();
    let rels: Vec<usize> = mp
        .hops()
        .iter()
        .map(|h| schema.relation_index(&h.relation).unwrap())
        .collect();
    let mut s = BTreeSet::new();
    for inst in instances {
        for (k, &r) in rels.iter().enumerate() {
            s.insert((inst[k], r, inst[k + 1]));
        }
    }
    s
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// One graph convolution layer evaluated with dense per-relation adjacency
/// matrices and explicit loops. `nodes` are table rows; `triples` use table
/// rows too.
pub fn dense_layer(
    layer: &RgcnLayer,
    params: &ParameterSet<f64>,
    x: &Tensor<f64>,
    nodes: &[usize],
    triples: &[Triple],
    mean: bool,
) -> Tensor<f64> {
    let n = nodes.len();
    let pos = |g: usize| nodes.iter().position(|&v| v == g);
    let w0 = params.get(&layer.self_param()).unwrap();
    let mut out = vec![vec![0.0; layer.d_out]; n];
    for i in 0..n {
        for o in 0..layer.d_out {
            out[i][o] = (0..layer.d_in).map(|k| x.get(i, k) * w0.get(k, o)).sum();
        }
    }
    for &r in &layer.relations {
        let mut a = vec![vec![0.0; n]; n];
        for t in triples.iter().filter(|t| t.relation == r) {
            if let (Some(h), Some(tl)) = (pos(t.head), pos(t.tail)) {
                a[h][tl] = 1.0;
            }
        }
        let w = params.get(&layer.relation_param(r)).unwrap();
        for i in 0..n {
            let deg: f64 = a[i].iter().sum();
            if deg == 0.0 {
                continue;
            }
            let c = if mean { 1.0 / deg } else { 1.0 };
            for j in 0..n {
                if a[i][j] == 0.0 {
                    continue;
                }
                for o in 0..layer.d_out {
                    let m: f64 = (0..layer.d_in).map(|k| x.get(j, k) * w.get(k, o)).sum();
                    out[i][o] += c * m;
                }
            }
        }
    }
    Tensor::from_rows(
        &out.into_iter()
            .map(|row| row.into_iter().map(relu).collect())
            .collect::<Vec<_>>(),
    )
}

/// A small fixed graph: regions r0..r3 with POIs, brands and a business area.
pub fn tiny_kg() -> KnowledgeGraph {
    let mut b = KnowledgeGraph::builder(Arc::new(Schema::default_lbkg()));
    for r in 0..4 {
        b.add_entity(format!("region:{r}"), EntityType::Region)
            .unwrap();
    }
    for p in 0..4 {
        b.add_entity(format!("poi:{p}"), EntityType::POI).unwrap();
    }
    b.add_entity("brand:0", EntityType::Brand).unwrap();
    b.add_entity("area:0", EntityType::BusinessArea).unwrap();
    for (r, p) in [(0, 0), (0, 1), (1, 2), (2, 3)] {
        b.add_fact(&format!("region:{r}"), "Has", &format!("poi:{p}"))
            .unwrap();
        b.add_fact(&format!("poi:{p}"), "LocateAt", &format!("region:{r}"))
            .unwrap();
    }
    for p in [0, 2] {
        b.add_fact(&format!("poi:{p}"), "HasBrandOf", "brand:0")
            .unwrap();
        b.add_fact("brand:0", "BrandExistIn", &format!("poi:{p}"))
            .unwrap();
    }
    b.add_fact("poi:1", "Competitive", "poi:3").unwrap();
    b.add_fact("poi:3", "Competitive", "poi:1").unwrap();
    for r in [0, 1, 3] {
        b.add_fact(&format!("region:{r}"), "ServedBy", "area:0")
            .unwrap();
    }
    b.add_fact("area:0", "Contain", "poi:0").unwrap();
    b.add_fact("region:0", "NearBy", "region:1").unwrap();
    b.add_fact("region:2", "NearBy", "region:3").unwrap();
    b.build()
}
