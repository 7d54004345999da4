//! Synthetic LBKG with planted indicator signal.
//!
//! Regions sit on a grid. Each region holds a random number of POIs with a
//! three-level category, an optional brand and an optional business area;
//! region pairs are linked by border, proximity, functional similarity and
//! population flow. Every indicator value is a weighted sum of meta-path
//! instance counts from its region plus Gaussian noise.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::kg::{EntityType, KgBuilder, KnowledgeGraph, Schema};
use crate::metapath::{instance_counts, parse_metapath, MetaPathSchema};
use crate::util::{sha256_hex, stage_rng};

use super::{
    fit_ols, metrics, split, DataError, RegionIndicatorTable, SplitSpec, ENTITIES_FILE, FACTS_FILE,
    INDICATORS_FILE, MANIFEST_FILE, SCHEMA_FILE,
};

const LITE: &str = include_str!("../../data/synth_lite.toml");
const DEFAULT: &str = include_str!("../../data/synth_default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedPath {
    pub path: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicatorSpec {
    pub name: String,
    #[serde(default)]
    pub units: String,
    pub noise_std: f64,
    pub planted: Vec<PlantedPath>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub name: String,
    pub seed: u64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Inclusive range of POIs per region.
    pub pois_per_region: [usize; 2],
    pub category1: usize,
    pub category2_per_category1: usize,
    pub category3_per_category2: usize,
    pub brands: usize,
    /// Chance that a POI carries a brand of its leaf category.
    pub branded_fraction: f64,
    pub business_areas: usize,
    /// Chance that a region is also served by its second-nearest area.
    pub second_area_prob: f64,
    /// Chance that a POI belongs to its region's business area.
    pub area_member_fraction: f64,
    /// Base chance that two same-Category1 POIs within `competitive_radius`
    /// compete; scaled per region by a uniform intensity in `[0, 2)`.
    pub competitive_prob: f64,
    pub competitive_radius: usize,
    pub related_brand_prob: f64,
    /// Inclusive range of flow targets per region.
    pub flows_per_region: [usize; 2],
    pub flow_radius: usize,
    pub nearby_radius: usize,
    pub similar_per_region: usize,
    #[serde(rename = "indicator")]
    pub indicators: Vec<IndicatorSpec>,
}

impl SyntheticSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, DataError> {
        let spec: Self = toml::from_str(text).map_err(|e| DataError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let p = path.as_ref();
        let text = fs::read_to_string(p).map_err(|e| DataError::io(p, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// About 50 regions; the smoke-test scale.
    pub fn lite() -> Self {
        Self::from_toml_str(LITE).expect("shipped lite spec is valid")
    }

    /// About 500 regions.
    pub fn default_scale() -> Self {
        Self::from_toml_str(DEFAULT).expect("shipped default spec is valid")
    }

    pub fn num_regions(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Spec(m));
        if self.num_regions() < 5 {
            return bad(format!("{} regions; at least 5 needed", self.num_regions()));
        }
        let [lo, hi] = self.pois_per_region;
        if lo == 0 || lo > hi {
            return bad(format!(
                "pois_per_region {lo}..{hi} must be a non-empty range starting at 1 or more"
            ));
        }
        if self.category1 == 0
            || self.category2_per_category1 == 0
            || self.category3_per_category2 == 0
        {
            return bad("category counts must be positive".into());
        }
        if self.business_areas == 0 || self.business_areas > self.num_regions() {
            return bad(format!(
                "business_areas must be in 1..={}",
                self.num_regions()
            ));
        }
        for (name, p) in [
            ("branded_fraction", self.branded_fraction),
            ("second_area_prob", self.second_area_prob),
            ("area_member_fraction", self.area_member_fraction),
            ("related_brand_prob", self.related_brand_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if !(0.0..=0.5).contains(&self.competitive_prob) {
            return bad(format!(
                "competitive_prob = {} must lie in [0, 0.5]",
                self.competitive_prob
            ));
        }
        if self.flows_per_region[0] > self.flows_per_region[1] {
            return bad("flows_per_region range is empty".into());
        }
        if self.indicators.is_empty() {
            return bad("no indicators".into());
        }
        let schema = Schema::default_lbkg();
        let mut seen = std::collections::BTreeSet::new();
        for ind in &self.indicators {
            if !seen.insert(ind.name.as_str()) {
                return bad(format!("indicator `{}` declared twice", ind.name));
            }
            if !(ind.noise_std >= 0.0 && ind.noise_std.is_finite()) {
                return bad(format!(
                    "noise_std of `{}` must be finite and non-negative",
                    ind.name
                ));
            }
            if ind.planted.is_empty() {
                return bad(format!("indicator `{}` has no planted paths", ind.name));
            }
            for p in &ind.planted {
                parse_metapath(&p.path, &schema)?;
                if !p.weight.is_finite() {
                    return bad(format!("weight of `{}` is not finite", p.path));
                }
            }
        }
        Ok(())
    }

    pub fn indicator(&self, name: &str) -> Option<&IndicatorSpec> {
        self.indicators.iter().find(|i| i.name == name)
    }
}

/// Held-out fit of the count-feature least-squares oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub split_seed: u64,
    pub train_regions: usize,
    pub heldout_regions: usize,
    pub r2_train: f64,
    pub r2_heldout: f64,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorManifest {
    pub name: String,
    pub units: String,
    pub noise_std: f64,
    pub planted: Vec<PlantedPath>,
    /// Total instances of each planted path over all regions.
    pub instance_totals: Vec<u64>,
    pub oracle: OracleReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub generator: String,
    pub spec: SyntheticSpec,
    pub num_entities: usize,
    pub num_facts: usize,
    pub entities_per_type: BTreeMap<String, usize>,
    pub facts_per_relation: BTreeMap<String, usize>,
    pub schema_hash: String,
    pub kg_hash: String,
    pub indicators: Vec<IndicatorManifest>,
    /// SHA-256 of every other file written by [`write_dataset`].
    #[serde(default)]
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub kg: KnowledgeGraph,
    pub table: RegionIndicatorTable,
    pub manifest: SyntheticManifest,
}

fn chebyshev(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

struct Gen<'s> {
    spec: &'s SyntheticSpec,
    b: KgBuilder,
    // several generation steps may emit the same fact; it is kept once
    emitted: HashSet<(String, String, String)>,
}

impl Gen<'_> {
    fn fact(&mut self, h: &str, r: &str, t: &str) {
        if self
            .emitted
            .insert((h.to_string(), r.to_string(), t.to_string()))
        {
            self.b
                .add_fact(h, r, t)
                .expect("generator emits schema-valid facts");
        }
    }

    fn pair(&mut self, h: &str, fwd: &str, t: &str, rev: &str) {
        self.fact(h, fwd, t);
        self.fact(t, rev, h);
    }

    fn entity(&mut self, id: &str, ty: EntityType) {
        self.b.add_entity(id, ty).expect("generator ids are unique");
    }

    fn pos(&self, region: usize) -> (usize, usize) {
        (region / self.spec.grid_cols, region % self.spec.grid_cols)
    }
}

fn region_id(i: usize) -> String {
    format!("region:{i:04}")
}

/// Builds the graph and indicator table for `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset, DataError> {
    spec.validate()?;
    let schema = Arc::new(Schema::default_lbkg());
    let seed = spec.seed;
    let mut g = Gen {
        spec,
        b: KgBuilder::new(schema.clone()),
        emitted: HashSet::new(),
    };
    let n_regions = spec.num_regions();

    for i in 0..n_regions {
        g.entity(&region_id(i), EntityType::Region);
    }

    // category tree
    let n_c2 = spec.category1 * spec.category2_per_category1;
    let n_c3 = n_c2 * spec.category3_per_category2;
    let c1_id = |i: usize| format!("cat1:{i:02}");
    let c2_id = |i: usize| format!("cat2:{i:03}");
    let c3_id = |i: usize| format!("cat3:{i:04}");
    let c2_parent = |c2: usize| c2 / spec.category2_per_category1;
    let c3_parent = |c3: usize| c3 / spec.category3_per_category2;
    for i in 0..spec.category1 {
        g.entity(&c1_id(i), EntityType::Category1);
    }
    for i in 0..n_c2 {
        g.entity(&c2_id(i), EntityType::Category2);
    }
    for i in 0..n_c3 {
        g.entity(&c3_id(i), EntityType::Category3);
    }
    for c2 in 0..n_c2 {
        g.pair(
            &c2_id(c2),
            "IsSubCategoryOf_2to1",
            &c1_id(c2_parent(c2)),
            "IsBroadCategoryOf_1to2",
        );
    }
    for c3 in 0..n_c3 {
        let c2 = c3_parent(c3);
        g.pair(
            &c3_id(c3),
            "IsSubCategoryOf_3to2",
            &c2_id(c2),
            "IsBroadCategoryOf_2to3",
        );
        g.pair(
            &c3_id(c3),
            "IsSubCategoryOf_3to1",
            &c1_id(c2_parent(c2)),
            "IsBroadCategoryOf_1to3",
        );
    }

    // brands, each tied to one leaf category
    let mut rng = stage_rng(seed, "synth/brands");
    let brand_id = |i: usize| format!("brand:{i:03}");
    let brand_c3: Vec<usize> = (0..spec.brands)
        .map(|_| rng.random_range(0..n_c3))
        .collect();
    let mut brands_of_c3: Vec<Vec<usize>> = vec![Vec::new(); n_c3];
    for (b, &c3) in brand_c3.iter().enumerate() {
        g.entity(&brand_id(b), EntityType::Brand);
        brands_of_c3[c3].push(b);
    }
    for (b, &c3) in brand_c3.iter().enumerate() {
        let c2 = c3_parent(c3);
        let c1 = c2_parent(c2);
        g.pair(
            &brand_id(b),
            "BelongToCategory3",
            &c3_id(c3),
            "Category3HasBrandOf",
        );
        g.pair(
            &brand_id(b),
            "BelongToCategory2",
            &c2_id(c2),
            "Category2HasBrandOf",
        );
        g.pair(
            &brand_id(b),
            "BelongToCategory1",
            &c1_id(c1),
            "Category1HasBrandOf",
        );
    }
    for a in 0..spec.brands {
        for b in a + 1..spec.brands {
            let same = c2_parent(c3_parent(brand_c3[a])) == c2_parent(c3_parent(brand_c3[b]));
            if same && rng.random_bool(spec.related_brand_prob) {
                g.pair(&brand_id(a), "RelatedBrand", &brand_id(b), "RelatedBrand");
            }
        }
    }

    // business areas: nearest (and sometimes second-nearest) center serves a region
    let mut rng = stage_rng(seed, "synth/areas");
    let ba_id = |i: usize| format!("area:{i:02}");
    let mut centers: Vec<usize> = (0..n_regions).collect();
    centers.shuffle(&mut rng);
    centers.truncate(spec.business_areas);
    for a in 0..spec.business_areas {
        g.entity(&ba_id(a), EntityType::BusinessArea);
    }
    let mut primary_area = vec![0usize; n_regions];
    for r in 0..n_regions {
        let p = g.pos(r);
        let mut by_dist: Vec<(usize, usize)> = centers
            .iter()
            .enumerate()
            .map(|(a, &c)| {
                let q = g.pos(c);
                (p.0.abs_diff(q.0).pow(2) + p.1.abs_diff(q.1).pow(2), a)
            })
            .collect();
        by_dist.sort_unstable();
        primary_area[r] = by_dist[0].1;
        g.pair(&region_id(r), "ServedBy", &ba_id(by_dist[0].1), "Serve");
        if by_dist.len() > 1 && rng.random_bool(spec.second_area_prob) {
            g.pair(&region_id(r), "ServedBy", &ba_id(by_dist[1].1), "Serve");
        }
    }

    // POIs
    let mut rng = stage_rng(seed, "synth/pois");
    let mut pois_in: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_regions]; // (poi, category1)
    let mut c1_tally = vec![vec![0usize; spec.category1]; n_regions];
    let mut next_poi = 0usize;
    let poi_id = |i: usize| format!("poi:{i:05}");
    for r in 0..n_regions {
        let n = rng.random_range(spec.pois_per_region[0]..=spec.pois_per_region[1]);
        for _ in 0..n {
            let p = next_poi;
            next_poi += 1;
            let pid = poi_id(p);
            let rid = region_id(r);
            g.entity(&pid, EntityType::POI);
            g.pair(&rid, "Has", &pid, "LocateAt");
            let c3 = rng.random_range(0..n_c3);
            let c2 = c3_parent(c3);
            let c1 = c2_parent(c2);
            g.pair(&pid, "HasCategory3Of", &c3_id(c3), "Category3ExistIn");
            g.pair(&pid, "HasCategory2Of", &c2_id(c2), "Category2ExistIn");
            g.pair(&pid, "HasCategory1Of", &c1_id(c1), "Category1ExistIn");
            if !brands_of_c3[c3].is_empty() && rng.random_bool(spec.branded_fraction) {
                let b = *brands_of_c3[c3].choose(&mut rng).expect("non-empty");
                g.pair(&pid, "HasBrandOf", &brand_id(b), "BrandExistIn");
                g.pair(&rid, "HasStoreOf", &brand_id(b), "HasPlacedStoreAt");
            }
            if rng.random_bool(spec.area_member_fraction) {
                g.pair(&pid, "BelongTo", &ba_id(primary_area[r]), "Contain");
            }
            pois_in[r].push((p, c1));
            c1_tally[r][c1] += 1;
        }
    }

    // competition between same-Category1 POIs in nearby regions
    let mut rng = stage_rng(seed, "synth/competition");
    let intensity: Vec<f64> = (0..n_regions).map(|_| rng.random_range(0.0..2.0)).collect();
    for ra in 0..n_regions {
        for rb in ra..n_regions {
            if chebyshev(g.pos(ra), g.pos(rb)) > spec.competitive_radius {
                continue;
            }
            let prob = spec.competitive_prob * (intensity[ra] + intensity[rb]) / 2.0;
            for (ia, &(pa, ca)) in pois_in[ra].iter().enumerate() {
                let from = if ra == rb { ia + 1 } else { 0 };
                for &(pb, cb) in &pois_in[rb][from..] {
                    if ca == cb && rng.random_bool(prob) {
                        g.pair(&poi_id(pa), "Competitive", &poi_id(pb), "Competitive");
                    }
                }
            }
        }
    }

    // region-region relations
    let mut rng = stage_rng(seed, "synth/regions");
    for a in 0..n_regions {
        for b in 0..n_regions {
            if a == b {
                continue;
            }
            let (pa, pb) = (g.pos(a), g.pos(b));
            let d = chebyshev(pa, pb);
            if pa.0.abs_diff(pb.0) + pa.1.abs_diff(pb.1) == 1 {
                g.fact(&region_id(a), "BorderBy", &region_id(b));
            }
            if d <= spec.nearby_radius {
                g.fact(&region_id(a), "NearBy", &region_id(b));
            }
        }
    }
    for a in 0..n_regions {
        let k = rng.random_range(spec.flows_per_region[0]..=spec.flows_per_region[1]);
        let mut cands: Vec<usize> = (0..n_regions)
            .filter(|&b| b != a && chebyshev(g.pos(a), g.pos(b)) <= spec.flow_radius)
            .collect();
        cands.shuffle(&mut rng);
        for &b in cands.iter().take(k) {
            g.pair(
                &region_id(a),
                "PopulationFlowTo",
                &region_id(b),
                "PopulationInflowFrom",
            );
        }
    }
    let dominant: Vec<Option<usize>> = c1_tally
        .iter()
        .map(|t| {
            (0..t.len())
                .filter(|&c| t[c] > 0)
                .max_by_key(|&c| (t[c], std::cmp::Reverse(c)))
        })
        .collect();
    for a in 0..n_regions {
        let Some(da) = dominant[a] else { continue };
        let mut cands: Vec<usize> = (0..n_regions)
            .filter(|&b| b != a && dominant[b] == Some(da))
            .collect();
        cands.shuffle(&mut rng);
        for &b in cands.iter().take(spec.similar_per_region) {
            g.pair(
                &region_id(a),
                "SimilarFunction",
                &region_id(b),
                "SimilarFunction",
            );
        }
    }

    let kg = g.b.build();
    let regions = kg.region_ids();

    let mut table = RegionIndicatorTable::new();
    let mut ind_manifests = Vec::new();
    for ind in &spec.indicators {
        let paths = planted_schemas(ind, kg.schema())?;
        let features = count_features(&kg, &paths);
        let mut totals = Vec::new();
        for (k, p) in paths.iter().enumerate() {
            let total: u64 = features.iter().map(|f| f[k] as u64).sum();
            if total == 0 {
                return Err(DataError::NoInstances {
                    indicator: ind.name.clone(),
                    path: p.pattern(),
                });
            }
            totals.push(total);
        }
        let mut noise_rng = stage_rng(seed, &format!("synth/noise/{}", ind.name));
        let noise = Normal::new(0.0, ind.noise_std).map_err(|e| DataError::Spec(e.to_string()))?;
        for (r, f) in regions.iter().zip(&features) {
            let clean: f64 = ind.planted.iter().zip(f).map(|(p, c)| p.weight * c).sum();
            let eps = if ind.noise_std > 0.0 {
                noise.sample(&mut noise_rng)
            } else {
                0.0
            };
            table.insert(r, &ind.name, clean + eps)?;
        }
        let y = table.values_for(&ind.name, &regions)?;
        let oracle = oracle_r2(&features, &y, seed)?;
        ind_manifests.push(IndicatorManifest {
            name: ind.name.clone(),
            units: ind.units.clone(),
            noise_std: ind.noise_std,
            planted: ind.planted.clone(),
            instance_totals: totals,
            oracle,
        });
    }

    let mut entities_per_type = BTreeMap::new();
    for e in kg.entities() {
        *entities_per_type.entry(e.etype.to_string()).or_insert(0) += 1;
    }
    let mut facts_per_relation = BTreeMap::new();
    for t in kg.triples() {
        *facts_per_relation
            .entry(kg.schema().relations()[t.relation].name.clone())
            .or_insert(0) += 1;
    }
    let manifest = SyntheticManifest {
        generator: format!("regionkg {}", env!("CARGO_PKG_VERSION")),
        spec: spec.clone(),
        num_entities: kg.num_entities(),
        num_facts: kg.num_facts(),
        entities_per_type,
        facts_per_relation,
        schema_hash: kg.schema().content_hash(),
        kg_hash: kg.content_hash(),
        indicators: ind_manifests,
        files: BTreeMap::new(),
    };
    Ok(SyntheticDataset {
        kg,
        table,
        manifest,
    })
}

fn planted_schemas(ind: &IndicatorSpec, schema: &Schema) -> Result<Vec<MetaPathSchema>, DataError> {
    ind.planted
        .iter()
        .map(|p| Ok(parse_metapath(&p.path, schema)?))
        .collect()
}

/// Instance counts of each path per region, regions in entity order.
pub fn count_features(kg: &KnowledgeGraph, paths: &[MetaPathSchema]) -> Vec<Vec<f64>> {
    let region_rows = kg.entities_of_type(EntityType::Region);
    let per_path: Vec<Vec<u64>> = paths.iter().map(|p| instance_counts(kg, p)).collect();
    region_rows
        .iter()
        .map(|&r| per_path.iter().map(|c| c[r] as f64).collect())
        .collect()
}

/// Fits least squares on the training part of a 6:2:2 split seeded by
/// `split_seed` and scores it on the remaining regions.
pub fn oracle_r2(
    features: &[Vec<f64>],
    y: &[f64],
    split_seed: u64,
) -> Result<OracleReport, DataError> {
    let s = split(y.len(), &SplitSpec::new(split_seed))?;
    let held: Vec<usize> = s.val.iter().chain(&s.test).copied().collect();
    let pick = |ix: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
        (
            ix.iter().map(|&i| features[i].clone()).collect(),
            ix.iter().map(|&i| y[i]).collect(),
        )
    };
    let (xtr, ytr) = pick(&s.train);
    let (xho, yho) = pick(&held);
    let fit = fit_ols(&xtr, &ytr)?;
    let ptr: Vec<f64> = xtr.iter().map(|x| fit.predict(x)).collect();
    let pho: Vec<f64> = xho.iter().map(|x| fit.predict(x)).collect();
    Ok(OracleReport {
        split_seed,
        train_regions: s.train.len(),
        heldout_regions: held.len(),
        r2_train: metrics(&ptr, &ytr)?.r2,
        r2_heldout: metrics(&pho, &yho)?.r2,
        intercept: fit.intercept,
        coefficients: fit.coefficients,
    })
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<String, DataError> {
    let p = dir.join(name);
    fs::write(&p, text).map_err(|e| DataError::io(&p, e))?;
    Ok(sha256_hex(text.as_bytes()))
}

/// Writes entities, facts, schema, indicator table and manifest into `dir`.
pub fn write_dataset(
    ds: &SyntheticDataset,
    dir: impl AsRef<Path>,
) -> Result<SyntheticManifest, DataError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let mut entities = String::new();
    for e in ds.kg.entities() {
        entities.push_str(&format!("{}\t{}\n", e.id, e.etype));
    }
    let mut facts = String::new();
    for f in ds.kg.facts() {
        facts.push_str(&format!("{}\t{}\t{}\n", f.head, f.relation, f.tail));
    }
    let mut manifest = ds.manifest.clone();
    manifest.files.insert(
        ENTITIES_FILE.into(),
        write_file(dir, ENTITIES_FILE, &entities)?,
    );
    manifest
        .files
        .insert(FACTS_FILE.into(), write_file(dir, FACTS_FILE, &facts)?);
    manifest.files.insert(
        SCHEMA_FILE.into(),
        write_file(dir, SCHEMA_FILE, &ds.kg.schema().to_tsv())?,
    );
    manifest.files.insert(
        INDICATORS_FILE.into(),
        write_file(dir, INDICATORS_FILE, &ds.table.to_csv())?,
    );
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_file(dir, MANIFEST_FILE, &json)?;
    Ok(manifest)
}
