//! Typed location knowledge graph: schema, entity table, fact store and
//! relation-indexed adjacency.
//!
//! Facts are stored once. Both directions are served from per-relation
//! indices: `forward` maps a head to its tails, `reverse` a tail to its heads.
//! Neighbor lists are sorted by entity id so every consumer sees a
//! deterministic order.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_SCHEMA: &str = include_str!("../data/lbkg_schema.tsv");

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("unknown entity type `{0}`")]
    UnknownEntityType(String),
    #[error("duplicate relation `{0}`")]
    DuplicateRelation(String),
    #[error("duplicate entity id `{0}`")]
    DuplicateEntity(String),
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("{side} type {found} \u{2260} {expected} for relation {relation}")]
    TypeMismatch {
        side: &'static str,
        found: EntityType,
        expected: EntityType,
        relation: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl KgError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        KgError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// The closed set of entity types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityType {
    Region,
    POI,
    Category1,
    Category2,
    Category3,
    Brand,
    BusinessArea,
}

impl EntityType {
    pub const ALL: [EntityType; 7] = [
        EntityType::Region,
        EntityType::POI,
        EntityType::Category1,
        EntityType::Category2,
        EntityType::Category3,
        EntityType::Brand,
        EntityType::BusinessArea,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Region => "Region",
            EntityType::POI => "POI",
            EntityType::Category1 => "Category1",
            EntityType::Category2 => "Category2",
            EntityType::Category3 => "Category3",
            EntityType::Brand => "Brand",
            EntityType::BusinessArea => "BusinessArea",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityType {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityType::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| KgError::UnknownEntityType(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationType {
    pub name: String,
    pub head: EntityType,
    pub tail: EntityType,
    /// Human-readable meaning, used when describing the schema to agents.
    pub meaning: Option<String>,
}

/// A validated relation catalogue over the fixed entity types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    relations: Vec<RelationType>,
    by_name: HashMap<String, usize>,
}

impl Schema {
    pub fn new(relations: Vec<RelationType>) -> Result<Self, KgError> {
        let mut by_name = HashMap::with_capacity(relations.len());
        for (i, r) in relations.iter().enumerate() {
            if by_name.insert(r.name.clone(), i).is_some() {
                return Err(KgError::DuplicateRelation(r.name.clone()));
            }
        }
        Ok(Schema { relations, by_name })
    }

    /// The 35-relation schema shipped with the crate.
    pub fn default_lbkg() -> Self {
        Self::parse(DEFAULT_SCHEMA, "<default schema>").expect("shipped schema is valid")
    }

    /// Parses the tab-separated schema format
    /// `relation<TAB>head_type<TAB>tail_type[<TAB>meaning]` with `#` comments.
    pub fn parse(text: &str, origin: &str) -> Result<Self, KgError> {
        let mut relations = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = split_record(line);
            if cols.len() < 3 {
                return Err(KgError::Parse {
                    file: origin.to_string(),
                    line: lineno + 1,
                    msg: format!(
                        "expected relation, head_type, tail_type; got {} column(s)",
                        cols.len()
                    ),
                });
            }
            let head = cols[1].parse::<EntityType>()?;
            let tail = cols[2].parse::<EntityType>()?;
            let meaning = cols
                .get(3)
                .map(|m| m.trim().to_string())
                .filter(|m| !m.is_empty());
            relations.push(RelationType {
                name: cols[0].to_string(),
                head,
                tail,
                meaning,
            });
        }
        Self::new(relations)
    }

    pub fn entity_types(&self) -> &'static [EntityType] {
        &EntityType::ALL
    }

    pub fn relations(&self) -> &[RelationType] {
        &self.relations
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn relation(&self, name: &str) -> Option<&RelationType> {
        self.by_name.get(name).map(|&i| &self.relations[i])
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    /// Relations whose head type is `head`, in schema order.
    pub fn relations_from(&self, head: EntityType) -> impl Iterator<Item = (usize, &RelationType)> {
        self.relations
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.head == head)
    }

    /// Renders the schema back to its file format.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# relation\thead_type\ttail_type\tmeaning\n");
        for r in &self.relations {
            out.push_str(&format!("{}\t{}\t{}", r.name, r.head, r.tail));
            if let Some(m) = &r.meaning {
                out.push('\t');
                out.push_str(m);
            }
            out.push('\n');
        }
        out
    }

    /// Stable content hash (hex SHA-256 of the canonical rendering).
    pub fn content_hash(&self) -> String {
        crate::util::sha256_hex(self.to_tsv().as_bytes())
    }
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<Schema, KgError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| KgError::io(path, e))?;
    Schema::parse(&text, &path.display().to_string())
}

/// Tab-separated, but tolerate runs of plain spaces for hand-written files.
fn split_record(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub etype: EntityType,
}

/// A fact as it appears in files: `(head, relation, tail)` by name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fact {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Fact {
    pub fn new(
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
    ) -> Self {
        Fact {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

/// Index form of a fact: entity and relation positions in their tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

/// Compressed adjacency for one relation and one direction.
#[derive(Debug, Clone, Default)]
struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Adjacency {
    fn build(n: usize, pairs: impl Iterator<Item = (usize, usize)>, ids: &[String]) -> Self {
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (from, to) in pairs {
            lists[from].push(to);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for mut l in lists {
            l.sort_by(|a, b| ids[*a].cmp(&ids[*b]));
            targets.extend(l);
            offsets.push(targets.len());
        }
        Adjacency { offsets, targets }
    }

    fn get(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// An immutable, fully indexed knowledge graph.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    schema: Arc<Schema>,
    entities: Vec<Entity>,
    by_id: HashMap<String, usize>,
    triples: Vec<Triple>,
    forward: Vec<Adjacency>,
    reverse: Vec<Adjacency>,
    dropped_duplicates: usize,
}

/// Incremental constructor that type-checks every fact on insertion.
pub struct KgBuilder {
    schema: Arc<Schema>,
    entities: Vec<Entity>,
    by_id: HashMap<String, usize>,
    triples: Vec<Triple>,
    seen: HashSet<Triple>,
    dropped_duplicates: usize,
}

impl KgBuilder {
    pub fn new(schema: Arc<Schema>) -> Self {
        KgBuilder {
            schema,
            entities: Vec::new(),
            by_id: HashMap::new(),
            triples: Vec::new(),
            seen: HashSet::new(),
            dropped_duplicates: 0,
        }
    }

    pub fn add_entity(
        &mut self,
        id: impl Into<String>,
        etype: EntityType,
    ) -> Result<usize, KgError> {
        let id = id.into();
        if self.by_id.contains_key(&id) {
            return Err(KgError::DuplicateEntity(id));
        }
        let ix = self.entities.len();
        self.by_id.insert(id.clone(), ix);
        self.entities.push(Entity { id, etype });
        Ok(ix)
    }

    /// Adds a fact; returns `false` when it was a duplicate and got dropped.
    pub fn add_fact(&mut self, head: &str, relation: &str, tail: &str) -> Result<bool, KgError> {
        let rel_ix = self
            .schema
            .relation_index(relation)
            .ok_or_else(|| KgError::UnknownRelation(relation.to_string()))?;
        let h = *self
            .by_id
            .get(head)
            .ok_or_else(|| KgError::UnknownEntity(head.to_string()))?;
        let t = *self
            .by_id
            .get(tail)
            .ok_or_else(|| KgError::UnknownEntity(tail.to_string()))?;
        self.add_triple(Triple {
            head: h,
            relation: rel_ix,
            tail: t,
        })
    }

    pub fn add_triple(&mut self, triple: Triple) -> Result<bool, KgError> {
        let rel = &self.schema.relations()[triple.relation];
        let ht = self.entities[triple.head].etype;
        let tt = self.entities[triple.tail].etype;
        if ht != rel.head {
            return Err(KgError::TypeMismatch {
                side: "head",
                found: ht,
                expected: rel.head,
                relation: rel.name.clone(),
            });
        }
        if tt != rel.tail {
            return Err(KgError::TypeMismatch {
                side: "tail",
                found: tt,
                expected: rel.tail,
                relation: rel.name.clone(),
            });
        }
        if !self.seen.insert(triple) {
            self.dropped_duplicates += 1;
            return Ok(false);
        }
        self.triples.push(triple);
        Ok(true)
    }

    pub fn entity_index(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn build(self) -> KnowledgeGraph {
        let n = self.entities.len();
        let ids: Vec<String> = self.entities.iter().map(|e| e.id.clone()).collect();
        let nrel = self.schema.len();
        let mut by_rel: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nrel];
        for t in &self.triples {
            by_rel[t.relation].push((t.head, t.tail));
        }
        let forward = by_rel
            .iter()
            .map(|pairs| Adjacency::build(n, pairs.iter().copied(), &ids))
            .collect();
        let reverse = by_rel
            .iter()
            .map(|pairs| Adjacency::build(n, pairs.iter().map(|&(h, t)| (t, h)), &ids))
            .collect();
        if self.dropped_duplicates > 0 {
            log::warn!("dropped {} duplicate fact(s)", self.dropped_duplicates);
        }
        KnowledgeGraph {
            schema: self.schema,
            entities: self.entities,
            by_id: self.by_id,
            triples: self.triples,
            forward,
            reverse,
            dropped_duplicates: self.dropped_duplicates,
        }
    }
}

impl KnowledgeGraph {
    pub fn builder(schema: Arc<Schema>) -> KgBuilder {
        KgBuilder::new(schema)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_facts(&self) -> usize {
        self.triples.len()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn entity(&self, ix: usize) -> &Entity {
        &self.entities[ix]
    }

    pub fn entity_index(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn dropped_duplicates(&self) -> usize {
        self.dropped_duplicates
    }

    /// Facts by name, in insertion order.
    pub fn facts(&self) -> impl Iterator<Item = Fact> + '_ {
        self.triples.iter().map(move |t| self.fact(t))
    }

    pub fn fact(&self, t: &Triple) -> Fact {
        Fact::new(
            self.entities[t.head].id.clone(),
            self.schema.relations()[t.relation].name.clone(),
            self.entities[t.tail].id.clone(),
        )
    }

    /// Entity indices of a given type, in storage order.
    pub fn entities_of_type(&self, etype: EntityType) -> Vec<usize> {
        (0..self.entities.len())
            .filter(|&i| self.entities[i].etype == etype)
            .collect()
    }

    pub fn region_ids(&self) -> Vec<String> {
        self.entities_of_type(EntityType::Region)
            .into_iter()
            .map(|i| self.entities[i].id.clone())
            .collect()
    }

    /// Index-level neighbor lookup, sorted by entity id.
    pub fn adjacent(&self, entity: usize, relation: usize, direction: Direction) -> &[usize] {
        match direction {
            Direction::Forward => self.forward[relation].get(entity),
            Direction::Reverse => self.reverse[relation].get(entity),
        }
    }

    /// Neighbors of `entity` along `relation` by id.
    pub fn neighbors(
        &self,
        entity: &str,
        relation: &str,
        direction: Direction,
    ) -> Result<Vec<&str>, KgError> {
        let e = self
            .entity_index(entity)
            .ok_or_else(|| KgError::UnknownEntity(entity.to_string()))?;
        let r = self
            .schema
            .relation_index(relation)
            .ok_or_else(|| KgError::UnknownRelation(relation.to_string()))?;
        Ok(self
            .adjacent(e, r, direction)
            .iter()
            .map(|&j| self.entities[j].id.as_str())
            .collect())
    }

    /// Relation indices that have at least one fact, ascending.
    pub fn relations_present(&self) -> Vec<usize> {
        (0..self.schema.len())
            .filter(|&r| !self.forward[r].targets.is_empty())
            .collect()
    }

    /// Stable content hash over entities and facts.
    pub fn content_hash(&self) -> String {
        let mut buf = String::new();
        for e in &self.entities {
            buf.push_str(&format!("{}\t{}\n", e.id, e.etype));
        }
        let mut facts: Vec<Fact> = self.facts().collect();
        facts.sort();
        for f in facts {
            buf.push_str(&format!("{}\t{}\t{}\n", f.head, f.relation, f.tail));
        }
        crate::util::sha256_hex(buf.as_bytes())
    }
}

/// Loads an entity file (`entity_id<TAB>entity_type`) and a fact file
/// (`head_id<TAB>relation<TAB>tail_id`) against `schema`.
pub fn load_kg(
    entities_path: impl AsRef<Path>,
    facts_path: impl AsRef<Path>,
    schema: Arc<Schema>,
) -> Result<KnowledgeGraph, KgError> {
    let ep = entities_path.as_ref();
    let fp = facts_path.as_ref();
    let etext = fs::read_to_string(ep).map_err(|e| KgError::io(ep, e))?;
    let ftext = fs::read_to_string(fp).map_err(|e| KgError::io(fp, e))?;
    parse_kg(
        &etext,
        &ftext,
        schema,
        &ep.display().to_string(),
        &fp.display().to_string(),
    )
}

pub fn parse_kg(
    entities: &str,
    facts: &str,
    schema: Arc<Schema>,
    entities_origin: &str,
    facts_origin: &str,
) -> Result<KnowledgeGraph, KgError> {
    let mut b = KgBuilder::new(schema);
    for (lineno, line) in records(entities) {
        let cols = split_record(line);
        if cols.len() != 2 {
            return Err(KgError::Parse {
                file: entities_origin.to_string(),
                line: lineno,
                msg: "expected entity_id, entity_type".into(),
            });
        }
        b.add_entity(cols[0], cols[1].parse()?)?;
    }
    for (lineno, line) in records(facts) {
        let cols = split_record(line);
        if cols.len() != 3 {
            return Err(KgError::Parse {
                file: facts_origin.to_string(),
                line: lineno,
                msg: "expected head_id, relation, tail_id".into(),
            });
        }
        b.add_fact(cols[0], cols[1], cols[2])?;
    }
    Ok(b.build())
}

fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim_end_matches('\r');
        if l.trim().is_empty() || l.trim_start().starts_with('#') {
            None
        } else {
            Some((i + 1, l))
        }
    })
}

/// Writes the entity and fact files read by [`load_kg`].
pub fn save_kg(
    kg: &KnowledgeGraph,
    entities_path: impl AsRef<Path>,
    facts_path: impl AsRef<Path>,
) -> Result<(), KgError> {
    let ep = entities_path.as_ref();
    let fp = facts_path.as_ref();
    let mut ef = fs::File::create(ep).map_err(|e| KgError::io(ep, e))?;
    for e in kg.entities() {
        writeln!(ef, "{}\t{}", e.id, e.etype).map_err(|err| KgError::io(ep, err))?;
    }
    let mut ff = fs::File::create(fp).map_err(|e| KgError::io(fp, e))?;
    for f in kg.facts() {
        writeln!(ff, "{}\t{}\t{}", f.head, f.relation, f.tail)
            .map_err(|err| KgError::io(fp, err))?;
    }
    Ok(())
}
