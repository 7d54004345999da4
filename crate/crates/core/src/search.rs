//! Meta-path search baselines: random search and a small genetic algorithm
//! over individuals of six meta-paths, scored by a fitness callback
//! (normally the validation R² of a single-task model).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::EmbeddingProvider;
use crate::kg::{EntityType, KnowledgeGraph, Schema};
use crate::metapath::MetaPathSchema;
use crate::model::{train_single, ModelError, SlakConfig, TaskContext, TaskTargets};
use crate::util::stage_rng;

pub const GENES: usize = 6;
pub const MIN_LEN: usize = 2;
pub const MAX_LEN: usize = 4;
const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("search config: {0}")]
    Config(String),
    #[error("no meta-path of length {min}..={max} found from Region after {attempts} attempts")]
    DeadEnd {
        min: usize,
        max: usize,
        attempts: usize,
    },
    #[error("fitness evaluation {evaluation} failed: {source}")]
    Fitness {
        evaluation: usize,
        history: Box<SearchHistory>,
        #[source]
        source: ModelError,
    },
    #[error("i/o error on {path}: {msg}")]
    Io { path: String, msg: String },
}

/// A candidate solution: six meta-paths.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Individual {
    genes: Vec<MetaPathSchema>,
}

impl Individual {
    pub fn new(genes: Vec<MetaPathSchema>) -> Result<Self, SearchError> {
        if genes.len() != GENES {
            return Err(SearchError::Config(format!(
                "an individual has {GENES} genes, got {}",
                genes.len()
            )));
        }
        Ok(Individual { genes })
    }

    pub fn genes(&self) -> &[MetaPathSchema] {
        &self.genes
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, schema: &Schema) -> Result<Self, SearchError> {
        let genes = (0..GENES)
            .map(|_| random_metapath(rng, schema, MIN_LEN, MAX_LEN))
            .collect::<Result<_, _>>()?;
        Ok(Individual { genes })
    }
}

/// A random walk over the schema from Region with a uniform length in
/// `min_len..=max_len` and uniform relation choice per hop. Walks that hit a
/// type without outgoing relations are redrawn.
pub fn random_metapath<R: Rng + ?Sized>(
    rng: &mut R,
    schema: &Schema,
    min_len: usize,
    max_len: usize,
) -> Result<MetaPathSchema, SearchError> {
    if min_len == 0 || min_len > max_len {
        return Err(SearchError::Config(format!(
            "bad length range {min_len}..={max_len}"
        )));
    }
    'attempt: for _ in 0..MAX_RESAMPLES {
        let len = rng.random_range(min_len..=max_len);
        let mut current = EntityType::Region;
        let mut rels: Vec<&str> = Vec::with_capacity(len);
        for _ in 0..len {
            let out: Vec<_> = schema.relations_from(current).collect();
            if out.is_empty() {
                continue 'attempt;
            }
            let (_, r) = out[rng.random_range(0..out.len())];
            rels.push(&r.name);
            current = r.tail;
        }
        return MetaPathSchema::from_relations(schema, &rels)
            .map_err(|e| SearchError::Config(e.to_string()));
    }
    Err(SearchError::DeadEnd {
        min: min_len,
        max: max_len,
        attempts: MAX_RESAMPLES,
    })
}

/// Swaps the genes at one uniformly chosen index.
pub fn crossover<R: Rng + ?Sized>(
    a: &Individual,
    b: &Individual,
    rng: &mut R,
) -> (Individual, Individual) {
    let k = rng.random_range(0..GENES);
    let (mut ca, mut cb) = (a.clone(), b.clone());
    std::mem::swap(&mut ca.genes[k], &mut cb.genes[k]);
    (ca, cb)
}

/// Replaces each gene independently with probability `rate` by a fresh
/// random meta-path. Returns the mutated individual and the number of
/// replaced genes.
pub fn mutate<R: Rng + ?Sized>(
    ind: &Individual,
    rate: f64,
    rng: &mut R,
    schema: &Schema,
) -> Result<(Individual, usize), SearchError> {
    let mut out = ind.clone();
    let mut replaced = 0;
    for g in out.genes.iter_mut() {
        if rng.random_bool(rate) {
            *g = random_metapath(rng, schema, MIN_LEN, MAX_LEN)?;
            replaced += 1;
        }
    }
    Ok((out, replaced))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub population: usize,
    pub parents: usize,
    pub mutation_rate: f64,
    pub generations: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 5,
            parents: 2,
            mutation_rate: 0.1,
            generations: 6,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.parents != 2 {
            return Err(SearchError::Config(
                "crossover needs exactly 2 parents".into(),
            ));
        }
        if self.population < self.parents {
            return Err(SearchError::Config(
                "population must be at least the number of parents".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(SearchError::Config(
                "mutation rate must lie in [0, 1]".into(),
            ));
        }
        if self.generations == 0 {
            return Err(SearchError::Config("at least one generation".into()));
        }
        Ok(())
    }
}

/// One fitness evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub generation: usize,
    pub index: usize,
    pub individual: Individual,
    pub fitness: f64,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchHistory {
    pub algorithm: String,
    pub scheme: String,
    pub evaluations: Vec<Evaluation>,
}

impl SearchHistory {
    /// The best evaluation; ties go to the earliest.
    pub fn best(&self) -> Option<&Evaluation> {
        self.evaluations
            .iter()
            .fold(None, |acc: Option<&Evaluation>, e| match acc {
                Some(b) if b.fitness >= e.fitness => Some(b),
                _ => Some(e),
            })
    }

    /// Best fitness within each generation.
    pub fn best_per_generation(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for e in &self.evaluations {
            if e.generation == out.len() {
                out.push(e.fitness);
            } else {
                let last = out.last_mut().expect("generations are contiguous");
                *last = last.max(e.fitness);
            }
        }
        out
    }

    /// Tab-separated, one row per evaluation, preceded by `#` comment lines
    /// describing the search scheme.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# algorithm: {}", self.algorithm);
        for line in self.scheme.lines() {
            let _ = writeln!(s, "# {line}");
        }
        s.push_str("generation\tindex\tfitness\twall_ms");
        for g in 0..GENES {
            let _ = write!(s, "\tgene{}", g + 1);
        }
        s.push('\n');
        for e in &self.evaluations {
            let _ = write!(
                s,
                "{}\t{}\t{}\t{}",
                e.generation, e.index, e.fitness, e.wall_ms
            );
            for g in e.individual.genes() {
                let _ = write!(s, "\t{}", g.pattern());
            }
            s.push('\n');
        }
        s
    }

    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<(), SearchError> {
        let p = path.as_ref();
        fs::write(p, self.to_tsv()).map_err(|e| SearchError::Io {
            path: p.display().to_string(),
            msg: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: Individual,
    pub best_fitness: f64,
    pub history: SearchHistory,
}

fn evaluate<F>(
    history: &mut SearchHistory,
    fitness: &mut F,
    generation: usize,
    index: usize,
    ind: &Individual,
) -> Result<f64, SearchError>
where
    F: FnMut(&Individual) -> Result<f64, ModelError>,
{
    let t0 = Instant::now();
    match fitness(ind) {
        Ok(f) => {
            history.evaluations.push(Evaluation {
                generation,
                index,
                individual: ind.clone(),
                fitness: f,
                wall_ms: t0.elapsed().as_millis(),
            });
            Ok(f)
        }
        Err(source) => Err(SearchError::Fitness {
            evaluation: history.evaluations.len(),
            history: Box::new(history.clone()),
            source,
        }),
    }
}

fn finish(history: SearchHistory) -> SearchResult {
    let b = history.best().expect("at least one evaluation").clone();
    SearchResult {
        best: b.individual,
        best_fitness: b.fitness,
        history,
    }
}

const GA_SCHEME: &str = "generation 0: population drawn at random (6 meta-paths of 2-4 hops from Region)
each generation evaluates every individual once; the top 2 by fitness (ties to the lower index) are parents
next generation: the best parent is carried over unchanged, then children are added in pairs by
exchanging one random gene between the parents and mutating each gene with the mutation rate,
until the population is full (a surplus child is dropped)";

/// Genetic search. Exactly `population × generations` fitness calls.
pub fn genetic_search<F>(
    ga: &GaConfig,
    schema: &Schema,
    mut fitness: F,
) -> Result<SearchResult, SearchError>
where
    F: FnMut(&Individual) -> Result<f64, ModelError>,
{
    ga.validate()?;
    let mut rng = stage_rng(ga.seed, "search/ga");
    let mut history = SearchHistory {
        algorithm: format!(
            "genetic (population {}, parents {}, mutation rate {}, generations {}, seed {})",
            ga.population, ga.parents, ga.mutation_rate, ga.generations, ga.seed
        ),
        scheme: GA_SCHEME.to_string(),
        evaluations: Vec::new(),
    };
    let mut population: Vec<Individual> = (0..ga.population)
        .map(|_| Individual::random(&mut rng, schema))
        .collect::<Result<_, _>>()?;
    for generation in 0..ga.generations {
        let mut scored: Vec<(usize, f64)> = Vec::with_capacity(population.len());
        for (i, ind) in population.iter().enumerate() {
            scored.push((i, evaluate(&mut history, &mut fitness, generation, i, ind)?));
        }
        if generation + 1 == ga.generations {
            break;
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let (pa, pb) = (&population[scored[0].0], &population[scored[1].0]);
        let mut next = vec![pa.clone()];
        while next.len() < ga.population {
            let (ca, cb) = crossover(pa, pb, &mut rng);
            for c in [ca, cb] {
                let (m, _) = mutate(&c, ga.mutation_rate, &mut rng, schema)?;
                if next.len() < ga.population {
                    next.push(m);
                }
            }
        }
        population = next;
    }
    Ok(finish(history))
}

/// Random search: `iterations × per_iter` independent random individuals.
pub fn random_search<F>(
    iterations: usize,
    per_iter: usize,
    seed: u64,
    schema: &Schema,
    mut fitness: F,
) -> Result<SearchResult, SearchError>
where
    F: FnMut(&Individual) -> Result<f64, ModelError>,
{
    if iterations == 0 || per_iter == 0 {
        return Err(SearchError::Config(
            "random search needs at least one evaluation".into(),
        ));
    }
    let mut rng = stage_rng(seed, "search/random");
    let mut history = SearchHistory {
        algorithm: format!(
            "random (iterations {iterations}, per iteration {per_iter}, seed {seed})"
        ),
        scheme: "every individual is 6 independent random meta-paths of 2-4 hops from Region"
            .into(),
        evaluations: Vec::new(),
    };
    for it in 0..iterations {
        for i in 0..per_iter {
            let ind = Individual::random(&mut rng, schema)?;
            evaluate(&mut history, &mut fitness, it, i, &ind)?;
        }
    }
    Ok(finish(history))
}

/// Fitness as the validation R² of a single-task model trained on the
/// individual's meta-paths.
pub fn model_fitness<'a>(
    kg: &'a KnowledgeGraph,
    targets: &'a TaskTargets,
    config: &'a SlakConfig,
    provider: &'a EmbeddingProvider,
    indicator: &'a str,
    description: &'a str,
) -> impl FnMut(&Individual) -> Result<f64, ModelError> + 'a {
    move |ind| {
        let task = TaskContext::new(indicator, description, ind.genes().to_vec());
        Ok(train_single(&task, kg, targets, config, provider)?
            .metrics
            .val
            .r2)
    }
}
