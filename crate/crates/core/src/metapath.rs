//! Linear meta-path patterns: a textual form, validation against a
//! [`Schema`], instance matching, and sub-KG extraction.
//!
//! Text form: `Region -[Has]-> POI -[Competitive]-> POI`, optionally followed
//! by `# label`. Paths always start at `Region` and carry 1 to 6 hops.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::Path;

use thiserror::Error;

use crate::kg::{Direction, EntityType, KgError, KnowledgeGraph, Schema, Triple};

pub const MAX_HOPS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetaPathError {
    #[error("syntax error at column {col}: {msg}")]
    Syntax { col: usize, msg: String },
    #[error("unknown entity type `{0}`")]
    UnknownEntityType(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("hop {hop}: relation {relation} expects {expected}, found {found}")]
    TypeChain {
        hop: usize,
        relation: String,
        expected: EntityType,
        found: EntityType,
    },
    #[error("start type must be Region, found {0}")]
    StartNotRegion(EntityType),
    #[error("meta-path has {0} hops; allowed range is 1..={MAX_HOPS}")]
    HopCount(usize),
    #[error("{0} is not a Region entity")]
    NotARegion(String),
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Hop {
    pub relation: String,
    pub next: EntityType,
}

/// A validated meta-path. Equality and hashing ignore the label.
#[derive(Debug, Clone, Eq)]
pub struct MetaPathSchema {
    start: EntityType,
    hops: Vec<Hop>,
    label: Option<String>,
}

impl PartialEq for MetaPathSchema {
    fn eq(&self, other: &Self) -> bool {
        self.start == other.start && self.hops == other.hops
    }
}

impl Hash for MetaPathSchema {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.start.hash(state);
        self.hops.hash(state);
    }
}

impl MetaPathSchema {
    /// Builds and validates a path from relation names; entity types are
    /// read off the schema.
    pub fn from_relations(schema: &Schema, relations: &[&str]) -> Result<Self, MetaPathError> {
        let first = relations.first().ok_or(MetaPathError::HopCount(0))?;
        let start = schema
            .relation(first)
            .ok_or_else(|| MetaPathError::UnknownRelation(first.to_string()))?
            .head;
        let mut hops = Vec::with_capacity(relations.len());
        for r in relations {
            let rel = schema
                .relation(r)
                .ok_or_else(|| MetaPathError::UnknownRelation(r.to_string()))?;
            hops.push(Hop {
                relation: rel.name.clone(),
                next: rel.tail,
            });
        }
        let mp = MetaPathSchema {
            start,
            hops,
            label: None,
        };
        mp.validate(schema)?;
        Ok(mp)
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), MetaPathError> {
        if self.hops.is_empty() || self.hops.len() > MAX_HOPS {
            return Err(MetaPathError::HopCount(self.hops.len()));
        }
        if self.start != EntityType::Region {
            return Err(MetaPathError::StartNotRegion(self.start));
        }
        let mut current = self.start;
        for (i, hop) in self.hops.iter().enumerate() {
            let rel = schema
                .relation(&hop.relation)
                .ok_or_else(|| MetaPathError::UnknownRelation(hop.relation.clone()))?;
            if rel.head != current {
                return Err(MetaPathError::TypeChain {
                    hop: i + 1,
                    relation: rel.name.clone(),
                    expected: rel.head,
                    found: current,
                });
            }
            if rel.tail != hop.next {
                return Err(MetaPathError::TypeChain {
                    hop: i + 1,
                    relation: rel.name.clone(),
                    expected: rel.tail,
                    found: hop.next,
                });
            }
            current = hop.next;
        }
        Ok(())
    }

    pub fn start(&self) -> EntityType {
        self.start
    }

    pub fn hops(&self) -> &[Hop] {
        &self.hops
    }

    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    pub fn end(&self) -> EntityType {
        self.hops.last().map(|h| h.next).unwrap_or(self.start)
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        let l = label.into();
        self.label = if l.trim().is_empty() {
            None
        } else {
            Some(l.trim().to_string())
        };
        self
    }

    pub fn without_label(mut self) -> Self {
        self.label = None;
        self
    }

    /// Canonical text without the label.
    pub fn pattern(&self) -> String {
        let mut s = self.start.to_string();
        for h in &self.hops {
            s.push_str(" -[");
            s.push_str(&h.relation);
            s.push_str("]-> ");
            s.push_str(h.next.as_str());
        }
        s
    }

    /// Nested-clause sentence used as input to the text embedder.
    pub fn to_natural_language(&self) -> String {
        let mut s = self.start.to_string();
        for h in &self.hops {
            s.push_str(" THAT ");
            s.push_str(&h.relation);
            s.push(' ');
            s.push_str(h.next.as_str());
        }
        s
    }

    fn relation_indices(&self, schema: &Schema) -> Vec<usize> {
        self.hops
            .iter()
            .map(|h| {
                schema
                    .relation_index(&h.relation)
                    .expect("validated meta-path")
            })
            .collect()
    }
}

impl fmt::Display for MetaPathSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_metapath(self))
    }
}

/// Canonical text, with the label appended as a trailing `# label` comment.
pub fn format_metapath(mp: &MetaPathSchema) -> String {
    match &mp.label {
        Some(l) => format!("{} # {}", mp.pattern(), l),
        None => mp.pattern(),
    }
}

pub fn to_natural_language(mp: &MetaPathSchema) -> String {
    mp.to_natural_language()
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn col(&self) -> usize {
        self.src[..self.pos].chars().count() + 1
    }

    fn err(&self, msg: impl Into<String>) -> MetaPathError {
        MetaPathError::Syntax {
            col: self.col(),
            msg: msg.into(),
        }
    }

    fn ident(&mut self) -> Result<&'a str, MetaPathError> {
        let start = self.pos;
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_alphanumeric() || c == '_' {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        if start == self.pos {
            Err(self.err("expected identifier"))
        } else {
            Ok(&self.src[start..self.pos])
        }
    }

    fn expect(&mut self, lit: &str) -> Result<(), MetaPathError> {
        if self.src[self.pos..].starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(self.err(format!("expected `{lit}`")))
        }
    }
}

/// Parses and validates one meta-path line against `schema`.
pub fn parse_metapath(text: &str, schema: &Schema) -> Result<MetaPathSchema, MetaPathError> {
    let (body, label) = match text.find('#') {
        Some(i) => (&text[..i], Some(text[i + 1..].trim())),
        None => (text, None),
    };
    let mut cur = Cursor { src: body, pos: 0 };
    cur.skip_ws();
    let start_name = cur.ident()?;
    let start: EntityType = start_name
        .parse()
        .map_err(|_| MetaPathError::UnknownEntityType(start_name.to_string()))?;
    let mut hops = Vec::new();
    loop {
        cur.skip_ws();
        if cur.at_end() {
            break;
        }
        cur.expect("-[")?;
        cur.skip_ws();
        let rel = cur.ident()?;
        cur.skip_ws();
        cur.expect("]->")?;
        cur.skip_ws();
        let next_name = cur.ident()?;
        let next: EntityType = next_name
            .parse()
            .map_err(|_| MetaPathError::UnknownEntityType(next_name.to_string()))?;
        hops.push(Hop {
            relation: rel.to_string(),
            next,
        });
    }
    if hops.is_empty() {
        return Err(cur.err("expected at least one hop"));
    }
    let mp = MetaPathSchema {
        start,
        hops,
        label: None,
    };
    mp.validate(schema)?;
    Ok(match label {
        Some(l) => mp.with_label(l),
        None => mp,
    })
}

/// Reads a meta-path list file: one path per line, `#` comment lines, optional
/// trailing `# label`.
pub fn load_metapath_list(
    path: impl AsRef<Path>,
    schema: &Schema,
) -> Result<Vec<MetaPathSchema>, crate::Error> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
    parse_metapath_list(&text, schema).map_err(crate::Error::from)
}

pub fn parse_metapath_list(
    text: &str,
    schema: &Schema,
) -> Result<Vec<MetaPathSchema>, MetaPathError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| parse_metapath(l, schema))
        .collect()
}

pub fn format_metapath_list(paths: &[MetaPathSchema]) -> String {
    let mut s = String::new();
    for p in paths {
        s.push_str(&format_metapath(p));
        s.push('\n');
    }
    s
}

/// One matched instance: the entity indices visited, `hops + 1` long.
pub type PathInstance = Vec<usize>;

/// Enumerates every instance of `mp` in `kg` by forward expansion in schema
/// order. Start regions follow entity storage order; branches follow the
/// id-sorted neighbor order. Entities may repeat along an instance.
pub fn match_paths(
    kg: &KnowledgeGraph,
    mp: &MetaPathSchema,
    limit: Option<usize>,
) -> Vec<PathInstance> {
    let rels = mp.relation_indices(kg.schema());
    let mut out = Vec::new();
    let mut stack: Vec<usize> = Vec::with_capacity(rels.len() + 1);
    for start in kg.entities_of_type(mp.start()) {
        stack.push(start);
        if expand(kg, &rels, &mut stack, &mut out, limit) {
            break;
        }
        stack.pop();
    }
    out
}

// Returns true once the limit is hit.
fn expand(
    kg: &KnowledgeGraph,
    rels: &[usize],
    stack: &mut Vec<usize>,
    out: &mut Vec<PathInstance>,
    limit: Option<usize>,
) -> bool {
    let depth = stack.len() - 1;
    if depth == rels.len() {
        out.push(stack.clone());
        return limit.is_some_and(|l| out.len() >= l);
    }
    let here = *stack.last().unwrap();
    for &next in kg.adjacent(here, rels[depth], Direction::Forward) {
        stack.push(next);
        let stop = expand(kg, rels, stack, out, limit);
        stack.pop();
        if stop {
            return true;
        }
    }
    false
}

/// Same as [`match_paths`] with entity ids instead of indices.
pub fn match_paths_ids(
    kg: &KnowledgeGraph,
    mp: &MetaPathSchema,
    limit: Option<usize>,
) -> Vec<Vec<String>> {
    match_paths(kg, mp, limit)
        .into_iter()
        .map(|p| p.into_iter().map(|i| kg.entity(i).id.clone()).collect())
        .collect()
}

/// Number of instances starting at each entity (zero for non-regions),
/// computed by dynamic programming from the tail end of the pattern.
pub fn instance_counts(kg: &KnowledgeGraph, mp: &MetaPathSchema) -> Vec<u64> {
    let rels = mp.relation_indices(kg.schema());
    let n = kg.num_entities();
    // completions[v] = number of ways to finish the remaining hops from v
    let mut completions = vec![1u64; n];
    for (k, &r) in rels.iter().enumerate().rev() {
        let want = if k == 0 {
            mp.start()
        } else {
            mp.hops()[k - 1].next
        };
        let mut next = vec![0u64; n];
        for (v, slot) in next.iter_mut().enumerate() {
            if kg.entity(v).etype != want {
                continue;
            }
            *slot = kg
                .adjacent(v, r, Direction::Forward)
                .iter()
                .map(|&u| completions[u])
                .fold(0u64, u64::saturating_add);
        }
        completions = next;
    }
    completions
}

/// Number of matched instances whose first element is `region`.
pub fn count_instances(
    kg: &KnowledgeGraph,
    mp: &MetaPathSchema,
    region: &str,
) -> Result<u64, MetaPathError> {
    let ix = kg
        .entity_index(region)
        .ok_or_else(|| MetaPathError::UnknownEntity(region.to_string()))?;
    if kg.entity(ix).etype != EntityType::Region {
        return Err(MetaPathError::NotARegion(region.to_string()));
    }
    Ok(instance_counts(kg, mp)[ix])
}

/// The facts lying on at least one complete instance of a meta-path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubKg {
    facts: Vec<Triple>,
    entities: Vec<usize>,
}

impl SubKg {
    pub fn facts(&self) -> &[Triple] {
        &self.facts
    }

    /// Incident entities, ascending by index.
    pub fn entities(&self) -> &[usize] {
        &self.entities
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn from_facts(facts: impl IntoIterator<Item = Triple>) -> Self {
        let facts: BTreeSet<Triple> = facts.into_iter().collect();
        let entities: BTreeSet<usize> = facts.iter().flat_map(|t| [t.head, t.tail]).collect();
        SubKg {
            facts: facts.into_iter().collect(),
            entities: entities.into_iter().collect(),
        }
    }
}

/// Extracts the sub-KG of `mp`: a fact `(u, r_k, v)` at hop `k` is kept iff
/// `u` is reachable at position `k` from some start and `v` can complete the
/// remaining hops. Polynomial; does not enumerate instances.
pub fn extract_subkg(kg: &KnowledgeGraph, mp: &MetaPathSchema) -> SubKg {
    let rels = mp.relation_indices(kg.schema());
    let n = kg.num_entities();
    let l = rels.len();

    // reach[k][v]: v can sit at position k of some prefix
    let mut reach = vec![vec![false; n]; l + 1];
    for v in kg.entities_of_type(mp.start()) {
        reach[0][v] = true;
    }
    for k in 0..l {
        let (cur, rest) = reach.split_at_mut(k + 1);
        for v in 0..n {
            if cur[k][v] {
                for &u in kg.adjacent(v, rels[k], Direction::Forward) {
                    rest[0][u] = true;
                }
            }
        }
    }
    // finish[k][v]: from v at position k the remaining hops can be completed
    let mut finish = vec![vec![false; n]; l + 1];
    finish[l] = vec![true; n];
    for k in (0..l).rev() {
        for v in 0..n {
            finish[k][v] = kg
                .adjacent(v, rels[k], Direction::Forward)
                .iter()
                .any(|&u| finish[k + 1][u]);
        }
    }
    let mut facts = Vec::new();
    for (k, &r) in rels.iter().enumerate() {
        for v in 0..n {
            if !(reach[k][v] && finish[k][v]) {
                continue;
            }
            for &u in kg.adjacent(v, r, Direction::Forward) {
                if finish[k + 1][u] {
                    facts.push(Triple {
                        head: v,
                        relation: r,
                        tail: u,
                    });
                }
            }
        }
    }
    SubKg::from_facts(facts)
}

impl From<KgError> for MetaPathError {
    fn from(e: KgError) -> Self {
        match e {
            KgError::UnknownEntity(id) => MetaPathError::UnknownEntity(id),
            KgError::UnknownRelation(r) => MetaPathError::UnknownRelation(r),
            KgError::UnknownEntityType(t) => MetaPathError::UnknownEntityType(t),
            other => MetaPathError::Syntax {
                col: 0,
                msg: other.to_string(),
            },
        }
    }
}
