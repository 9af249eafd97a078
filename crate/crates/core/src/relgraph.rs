//! Weighted relation graph built from head/tail incidence frequencies.
//!
//! `A = E_hᵀ D_h⁻² E_h + E_tᵀ D_t⁻² E_t`, where `E_h[e, r]` counts how often
//! entity `e` is the head of relation `r` and `D_h` holds the row sums. Each
//! stored pair also carries an affinity bin in `1..=B` derived from its rank
//! among all nonzeros.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;

/// Sparse `n × m` incidence frequencies for one role (head or tail).
#[derive(Clone, Debug, PartialEq)]
pub struct RoleCounts {
    /// Per entity: `(relation, frequency)` sorted by relation.
    pub rows: Vec<Vec<(usize, u32)>>,
    pub degrees: Vec<u32>,
}

impl RoleCounts {
    fn from_pairs(n: usize, pairs: impl Iterator<Item = (usize, usize)>) -> Self {
        let mut rows: Vec<Vec<(usize, u32)>> = vec![Vec::new(); n];
        for (entity, rel) in pairs {
            let row = &mut rows[entity];
            match row.binary_search_by_key(&rel, |&(r, _)| r) {
                Ok(pos) => row[pos].1 += 1,
                Err(pos) => row.insert(pos, (rel, 1)),
            }
        }
        let degrees = rows.iter().map(|r| r.iter().map(|&(_, c)| c).sum()).collect();
        Self { rows, degrees }
    }

    pub fn get(&self, entity: usize, rel: usize) -> u32 {
        self.rows[entity]
            .binary_search_by_key(&rel, |&(r, _)| r)
            .map(|pos| self.rows[entity][pos].1)
            .unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.degrees.iter().map(|&d| u64::from(d)).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IncidenceCounts {
    pub num_entities: usize,
    pub num_relations: usize,
    pub head: RoleCounts,
    pub tail: RoleCounts,
}

/// Head and tail incidence frequencies of an augmented graph.
pub fn build_incidence(g: &KnowledgeGraph) -> Result<IncidenceCounts> {
    if !g.is_augmented() {
        return Err(Error::NotAugmented);
    }
    let n = g.num_entities();
    Ok(IncidenceCounts {
        num_entities: n,
        num_relations: g.num_relations(),
        head: RoleCounts::from_pairs(n, g.triplets().iter().map(|t| (t.head, t.rel))),
        tail: RoleCounts::from_pairs(n, g.triplets().iter().map(|t| (t.tail, t.rel))),
    })
}

/// Symmetric sparse affinity matrix in CSR layout with per-entry bins.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationGraph {
    num_relations: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
    bins: Vec<usize>,
    num_bins: usize,
}

// Per-entity outer products for one role, collected per relation pair.
fn collect_role_terms(role: &RoleCounts, terms: &mut HashMap<(usize, usize), Vec<f64>>) {
    for (row, &deg) in role.rows.iter().zip(&role.degrees) {
        if deg == 0 {
            continue;
        }
        let d2 = f64::from(deg) * f64::from(deg);
        for &(ri, ci) in row {
            for &(rj, cj) in row {
                let v = f64::from(ci) * f64::from(cj) / d2;
                terms.entry((ri, rj)).or_default().push(v);
            }
        }
    }
}

// Sums in sorted order so the result depends only on the multiset of terms,
// not on entity numbering.
fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Builds `A = A_h + A_t`. Bins are unassigned until [`assign_bins`].
pub fn build_affinity(inc: &IncidenceCounts) -> RelationGraph {
    let mut head_terms = HashMap::new();
    let mut tail_terms = HashMap::new();
    collect_role_terms(&inc.head, &mut head_terms);
    collect_role_terms(&inc.tail, &mut tail_terms);

    let mut entries: HashMap<(usize, usize), f64> = HashMap::new();
    for (key, mut terms) in head_terms {
        entries.insert(key, canonical_sum(&mut terms));
    }
    for (key, mut terms) in tail_terms {
        let t = canonical_sum(&mut terms);
        entries
            .entry(key)
            .and_modify(|h| *h += t)
            .or_insert(t);
    }
    let mut entries: Vec<((usize, usize), f64)> = entries.into_iter().collect();
    entries.sort_unstable_by_key(|&(k, _)| k);

    let m = inc.num_relations;
    let mut offsets = vec![0usize; m + 1];
    for &((i, _), _) in &entries {
        offsets[i + 1] += 1;
    }
    for i in 0..m {
        offsets[i + 1] += offsets[i];
    }
    RelationGraph {
        num_relations: m,
        offsets,
        cols: entries.iter().map(|&((_, j), _)| j).collect(),
        values: entries.iter().map(|&(_, v)| v).collect(),
        bins: Vec::new(),
        num_bins: 0,
    }
}

/// Assigns `s(i,j) = ⌈rank(a_ij)·B / nnz(A)⌉` over all stored nonzeros.
///
/// Nonzeros are ranked in descending order of value; equal values share the
/// rank of the first of them, so the bin is a function of the value alone.
pub fn assign_bins(mut rg: RelationGraph, num_bins: usize) -> Result<RelationGraph> {
    if num_bins < 1 {
        return Err(Error::Config("number of bins must be at least 1".into()));
    }
    let nnz = rg.values.len();
    let mut order: Vec<usize> = (0..nnz).collect();
    // CSR order is (i, j) ascending, so a stable sort keeps that as tie order.
    order.sort_by(|&a, &b| rg.values[b].total_cmp(&rg.values[a]));
    let mut bins = vec![0usize; nnz];
    let mut rank = 0usize;
    for (pos, &idx) in order.iter().enumerate() {
        if pos == 0 || rg.values[idx] != rg.values[order[pos - 1]] {
            rank = pos + 1;
        }
        bins[idx] = (rank * num_bins).div_ceil(nnz);
    }
    rg.bins = bins;
    rg.num_bins = num_bins;
    Ok(rg)
}

impl RelationGraph {
    /// Incidence, affinity and bins in one call.
    pub fn build(g: &KnowledgeGraph, num_bins: usize) -> Result<Self> {
        let inc = build_incidence(g)?;
        assign_bins(build_affinity(&inc), num_bins)
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    /// Neighbor relation ids of `i` (including `i` itself when `a_ii > 0`).
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.cols[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = self.offsets[i]..self.offsets[i + 1];
        match self.cols[row.clone()].binary_search(&j) {
            Ok(p) => self.values[row.start + p],
            Err(_) => 0.0,
        }
    }

    /// Bin of the stored pair `(i, j)`, if both present and bins assigned.
    pub fn bin(&self, i: usize, j: usize) -> Option<usize> {
        let row = self.offsets[i]..self.offsets[i + 1];
        let p = self.cols[row.clone()].binary_search(&j).ok()?;
        self.bins.get(row.start + p).copied()
    }

    /// All stored entries as `(i, j, a_ij, bin)` in row-major order. The bin
    /// is 0 when bins have not been assigned.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64, usize)> + '_ {
        (0..self.num_relations).flat_map(move |i| {
            (self.offsets[i]..self.offsets[i + 1]).map(move |p| {
                (
                    i,
                    self.cols[p],
                    self.values[p],
                    self.bins.get(p).copied().unwrap_or(0),
                )
            })
        })
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.num_relations]; self.num_relations];
        for (i, j, v, _) in self.entries() {
            d[i][j] = v;
        }
        d
    }

    /// TSV edge list: `rel_i  rel_j  affinity  bin`.
    pub fn to_tsv(&self, g: &KnowledgeGraph) -> String {
        let mut out = String::from("rel_i\trel_j\taffinity\tbin\n");
        for (i, j, v, b) in self.entries() {
            out.push_str(&format!(
                "{}\t{}\t{:?}\t{}\n",
                g.relation_label(i),
                g.relation_label(j),
                v,
                b
            ));
        }
        out
    }
}
