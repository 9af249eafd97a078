//! Triplet storage, label vocabularies and reverse augmentation.
//!
//! A [`KnowledgeGraph`] owns a deduplicated triplet list over dense entity
//! and relation ids. Reverse augmentation appends `(t, r⁻¹, h)` for every
//! `(h, r, t)`, with `r⁻¹ = r + m` where `m` is the number of base relations.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::unionfind::UnionFind;

/// Bidirectional label ↔ id map with ids assigned in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_insert(&mut self, label: &str) -> usize {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len();
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl FromIterator<String> for Vocab {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        let mut v = Vocab::new();
        for label in iter {
            v.get_or_insert(&label);
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub head: usize,
    pub rel: usize,
    pub tail: usize,
}

impl Triplet {
    pub const fn new(head: usize, rel: usize, tail: usize) -> Self {
        Self { head, rel, tail }
    }
}

/// One line of a triplet file, still in label space.
pub type LabeledTriplet = [String; 3];

/// Reads a TAB-separated triplet file. Blank lines are skipped; every other
/// line must have exactly three non-empty fields.
pub fn read_labeled(path: impl AsRef<Path>) -> Result<Vec<LabeledTriplet>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                message: format!("expected 3 TAB-separated fields, found {}", fields.len()),
            });
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                message: "empty field".into(),
            });
        }
        out.push([fields[0].into(), fields[1].into(), fields[2].into()]);
    }
    Ok(out)
}

/// Parses a triplet file into an un-augmented graph.
pub fn parse_triplets(path: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let lines = read_labeled(path)?;
    if lines.is_empty() {
        return Err(Error::EmptyGraph(path.display().to_string()));
    }
    let g = KnowledgeGraph::from_labeled(&lines);
    log::info!(
        "{}: {} entities, {} relations, {} triplets ({} lines)",
        path.display(),
        g.num_entities(),
        g.num_base_relations(),
        g.num_triplets(),
        lines.len()
    );
    Ok(g)
}

#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    entities: Arc<Vocab>,
    relations: Arc<Vocab>,
    triplets: Vec<Triplet>,
    augmented: bool,
    // CSR over incoming edges, keyed by tail entity: (source entity, relation).
    in_offsets: Vec<usize>,
    in_edges: Vec<(usize, usize)>,
}

impl KnowledgeGraph {
    /// Builds a graph from label triplets, assigning ids in first-appearance
    /// order (head, relation, tail per line) and dropping duplicates.
    pub fn from_labeled(lines: &[LabeledTriplet]) -> Self {
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let mut triplets = Vec::with_capacity(lines.len());
        for [h, r, t] in lines {
            let h = entities.get_or_insert(h);
            let r = relations.get_or_insert(r);
            let t = entities.get_or_insert(t);
            triplets.push(Triplet::new(h, r, t));
        }
        Self::from_parts(Arc::new(entities), Arc::new(relations), triplets)
    }

    /// Builds an un-augmented graph over existing vocabularies. Duplicates are
    /// removed keeping first occurrence.
    ///
    /// Panics if a triplet references an id outside the vocabularies.
    pub fn from_parts(entities: Arc<Vocab>, relations: Arc<Vocab>, triplets: Vec<Triplet>) -> Self {
        let mut seen = HashSet::with_capacity(triplets.len());
        let triplets: Vec<Triplet> = triplets.into_iter().filter(|t| seen.insert(*t)).collect();
        for t in &triplets {
            assert!(
                t.head < entities.len() && t.tail < entities.len() && t.rel < relations.len(),
                "triplet {t:?} outside vocabulary"
            );
        }
        let mut g = Self {
            entities,
            relations,
            triplets,
            augmented: false,
            in_offsets: Vec::new(),
            in_edges: Vec::new(),
        };
        g.rebuild_index();
        g
    }

    /// Graph over the same vocabularies containing only the selected base triplets.
    pub fn subgraph(&self, indices: &[usize]) -> Self {
        let triplets = indices.iter().map(|&i| self.triplets[i]).collect();
        Self::from_parts(self.entities.clone(), self.relations.clone(), triplets)
    }

    /// Appends the reverse triplet for every triplet. Relation `k` gets the
    /// reverse id `k + m` where `m` is the base relation count.
    pub fn augment_reverse(mut self) -> Result<Self> {
        if self.augmented {
            return Err(Error::AlreadyAugmented);
        }
        let m = self.relations.len();
        let reversed: Vec<Triplet> = self
            .triplets
            .iter()
            .map(|t| Triplet::new(t.tail, t.rel + m, t.head))
            .collect();
        self.triplets.extend(reversed);
        self.augmented = true;
        self.rebuild_index();
        Ok(self)
    }

    fn rebuild_index(&mut self) {
        let n = self.entities.len();
        let mut edges: Vec<(usize, usize, usize)> = self
            .triplets
            .iter()
            .map(|t| (t.tail, t.head, t.rel))
            .collect();
        edges.sort_unstable();
        let mut offsets = vec![0usize; n + 1];
        for &(tail, _, _) in &edges {
            offsets[tail + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        self.in_offsets = offsets;
        self.in_edges = edges.into_iter().map(|(_, h, r)| (h, r)).collect();
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Relation count including reverse relations once augmented.
    pub fn num_relations(&self) -> usize {
        if self.augmented {
            2 * self.relations.len()
        } else {
            self.relations.len()
        }
    }

    pub fn num_base_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_triplets(&self) -> usize {
        self.triplets.len()
    }

    /// Number of triplets before augmentation.
    pub fn num_base_triplets(&self) -> usize {
        if self.augmented {
            self.triplets.len() / 2
        } else {
            self.triplets.len()
        }
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn base_triplets(&self) -> &[Triplet] {
        &self.triplets[..self.num_base_triplets()]
    }

    pub fn entities(&self) -> &Arc<Vocab> {
        &self.entities
    }

    pub fn relations(&self) -> &Arc<Vocab> {
        &self.relations
    }

    /// The reverse of a relation id; an involution on augmented ids.
    pub fn inverse(&self, rel: usize) -> usize {
        let m = self.relations.len();
        if rel < m {
            rel + m
        } else {
            rel - m
        }
    }

    /// Base relation a (possibly reverse) relation id derives from.
    pub fn base_relation(&self, rel: usize) -> usize {
        rel % self.relations.len()
    }

    pub fn entity_label(&self, id: usize) -> &str {
        self.entities.label(id)
    }

    /// Label of a relation id; reverse relations render as `label^-1`.
    pub fn relation_label(&self, rel: usize) -> String {
        let m = self.relations.len();
        if rel < m {
            self.relations.label(rel).to_owned()
        } else {
            format!("{}^-1", self.relations.label(rel - m))
        }
    }

    /// Incoming edges of an entity as `(source, relation)` pairs, sorted.
    pub fn in_neighbors(&self, entity: usize) -> &[(usize, usize)] {
        &self.in_edges[self.in_offsets[entity]..self.in_offsets[entity + 1]]
    }

    /// All relations `k` with `(source, k, target)` in the graph.
    pub fn rel_between(&self, source: usize, target: usize) -> Vec<usize> {
        self.in_neighbors(target)
            .iter()
            .filter(|&&(s, _)| s == source)
            .map(|&(_, r)| r)
            .collect()
    }

    /// Maps a label triplet into this graph's id space.
    pub fn encode(&self, [h, r, t]: &LabeledTriplet) -> Result<Triplet> {
        let ent = |label: &str| {
            self.entities.id(label).ok_or_else(|| Error::UnknownLabel {
                kind: "entity",
                label: label.to_owned(),
            })
        };
        let rel = self.relations.id(r).ok_or_else(|| Error::UnknownLabel {
            kind: "relation",
            label: r.to_owned(),
        })?;
        Ok(Triplet::new(ent(h)?, rel, ent(t)?))
    }

    pub fn check_triplet(&self, t: &Triplet) -> Result<()> {
        let n = self.num_entities();
        for id in [t.head, t.tail] {
            if id >= n {
                return Err(Error::IdOutOfRange {
                    kind: "entity",
                    id,
                    count: n,
                });
            }
        }
        if t.rel >= self.num_relations() {
            return Err(Error::IdOutOfRange {
                kind: "relation",
                id: t.rel,
                count: self.num_relations(),
            });
        }
        Ok(())
    }

    /// Connected components of the undirected entity graph, ignoring
    /// entities that appear in no triplet.
    pub fn component_count(&self) -> usize {
        let mut uf = UnionFind::new(self.num_entities());
        let mut used = vec![false; self.num_entities()];
        for t in &self.triplets {
            uf.union(t.head, t.tail);
            used[t.head] = true;
            used[t.tail] = true;
        }
        let isolated = used.iter().filter(|&&u| !u).count();
        uf.set_count() - isolated
    }

    /// Stable 64-bit FNV-1a digest of the triplet list and labels.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        for t in self.base_triplets() {
            h.write(self.entities.label(t.head).as_bytes());
            h.write(&[0x09]);
            h.write(self.relations.label(t.rel).as_bytes());
            h.write(&[0x09]);
            h.write(self.entities.label(t.tail).as_bytes());
            h.write(&[0x0a]);
        }
        h.finish()
    }

    /// Serializes the base triplets as a triplet file body.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in self.base_triplets() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}",
                self.entities.label(t.head),
                self.relations.label(t.rel),
                self.entities.label(t.tail)
            );
        }
        out
    }

    pub fn write_triplets(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

/// Fact/target partition of a graph's base triplet indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitState {
    pub facts: Vec<usize>,
    pub targets: Vec<usize>,
}

impl SplitState {
    /// Checks disjointness and that the two sides cover `0..total`.
    pub fn is_partition_of(&self, total: usize) -> bool {
        let mut seen = vec![false; total];
        for &i in self.facts.iter().chain(&self.targets) {
            if i >= total || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }

    /// Augmented fact graph. Reverse triplets are added only after the split.
    pub fn fact_graph(&self, base: &KnowledgeGraph) -> Result<KnowledgeGraph> {
        base.subgraph(&self.facts).augment_reverse()
    }

    pub fn target_triplets(&self, base: &KnowledgeGraph) -> Vec<Triplet> {
        self.targets.iter().map(|&i| base.triplets()[i]).collect()
    }
}
