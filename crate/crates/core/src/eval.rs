//! Ranking metrics for link prediction.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triplet, Vocab};
use crate::model::{relation_diagonals, EmbeddingSet, ModelParameters};
use crate::numerics::Tensor;

/// How tied candidates are counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TieMode {
    /// `1 + #greater + (#equal − 1) / 2`
    #[default]
    Mid,
    Optimistic,
    Pessimistic,
}

impl std::str::FromStr for TieMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mid" => Ok(Self::Mid),
            "optimistic" => Ok(Self::Optimistic),
            "pessimistic" => Ok(Self::Pessimistic),
            _ => Err(Error::Config(format!("unknown tie mode `{s}`"))),
        }
    }
}

/// Known-true `(head, relation) → tails` over the augmented id space.
#[derive(Clone, Debug, Default)]
pub struct FilterSet {
    map: HashMap<(usize, usize), HashSet<usize>>,
}

impl FilterSet {
    /// Inserts each base triplet and its reverse (`k + num_base_relations`).
    pub fn new<'a>(num_base_relations: usize, triplets: impl IntoIterator<Item = &'a Triplet>) -> Self {
        let mut map: HashMap<(usize, usize), HashSet<usize>> = HashMap::new();
        for t in triplets {
            map.entry((t.head, t.rel)).or_default().insert(t.tail);
            map.entry((t.tail, t.rel + num_base_relations))
                .or_default()
                .insert(t.head);
        }
        Self { map }
    }

    pub fn contains(&self, head: usize, rel: usize, tail: usize) -> bool {
        self.map.get(&(head, rel)).is_some_and(|s| s.contains(&tail))
    }
}

/// Rank of `answer` among `scores`, skipping candidates for which `filtered`
/// holds (the answer itself is never skipped).
pub fn rank_from_scores(
    scores: &[f64],
    answer: usize,
    filtered: impl Fn(usize) -> bool,
    ties: TieMode,
) -> Result<f64> {
    let target = *scores.get(answer).ok_or(Error::IdOutOfRange {
        kind: "candidate",
        id: answer,
        count: scores.len(),
    })?;
    let (mut greater, mut equal) = (0usize, 0usize);
    for (c, &s) in scores.iter().enumerate() {
        if c == answer || filtered(c) {
            continue;
        }
        if s > target {
            greater += 1;
        } else if s == target {
            equal += 1;
        }
    }
    Ok(match ties {
        TieMode::Mid => 1.0 + greater as f64 + equal as f64 / 2.0,
        TieMode::Optimistic => 1.0 + greater as f64,
        TieMode::Pessimistic => 1.0 + (greater + equal) as f64,
    })
}

/// Scores every candidate tail of a `(head, relation, ?)` query.
pub struct Scorer<'a> {
    emb: &'a EmbeddingSet,
    diag: Tensor,
}

impl<'a> Scorer<'a> {
    pub fn new(emb: &'a EmbeddingSet, params: &ModelParameters) -> Self {
        Self {
            emb,
            diag: relation_diagonals(emb, params),
        }
    }

    pub fn num_candidates(&self) -> usize {
        self.emb.entities.rows()
    }

    pub fn tail_scores(&self, head: usize, rel: usize) -> Result<Vec<f64>> {
        let n = self.num_candidates();
        if head >= n {
            return Err(Error::IdOutOfRange {
                kind: "entity",
                id: head,
                count: n,
            });
        }
        if rel >= self.diag.rows() {
            return Err(Error::IdOutOfRange {
                kind: "relation",
                id: rel,
                count: self.diag.rows(),
            });
        }
        let q: Vec<f64> = self
            .emb
            .entities
            .row(head)
            .iter()
            .zip(self.diag.row(rel))
            .map(|(h, w)| h * w)
            .collect();
        Ok((0..n)
            .map(|j| q.iter().zip(self.emb.entities.row(j)).map(|(a, b)| a * b).sum())
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// `(?, r, t)`
    Head,
    /// `(h, r, ?)`
    Tail,
}

/// Rank of the tail-query `(head, rel, ?)` with answer `answer`.
pub fn rank_query(
    scorer: &Scorer<'_>,
    head: usize,
    rel: usize,
    answer: usize,
    filter: Option<&FilterSet>,
    ties: TieMode,
) -> Result<f64> {
    let scores = scorer.tail_scores(head, rel)?;
    rank_from_scores(&scores, answer, |c| filter.is_some_and(|f| f.contains(head, rel, c)), ties)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryRank {
    /// Index into the evaluated target list.
    pub target: usize,
    pub direction: Direction,
    pub known_relation: bool,
    pub rank: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub count: usize,
    pub mr: f64,
    pub mrr: f64,
    pub hit1: f64,
    pub hit3: f64,
    pub hit10: f64,
}

impl Metrics {
    /// `None` for an empty rank list.
    pub fn from_ranks(ranks: impl IntoIterator<Item = f64>) -> Option<Self> {
        let ranks: Vec<f64> = ranks.into_iter().collect();
        if ranks.is_empty() {
            return None;
        }
        let n = ranks.len() as f64;
        let frac = |k: f64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Some(Self {
            count: ranks.len(),
            mr: ranks.iter().sum::<f64>() / n,
            mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
            hit1: frac(1.0),
            hit3: frac(3.0),
            hit10: frac(10.0),
        })
    }
}

pub const SLICES: [&str; 5] = ["all", "known_relation", "new_relation", "head", "tail"];

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// One entry per name in [`SLICES`], in that order.
    pub slices: Vec<(&'static str, Option<Metrics>)>,
    /// Sorted by target, tail query before head query.
    pub ranks: Vec<QueryRank>,
}

impl EvalReport {
    pub fn from_ranks(ranks: Vec<QueryRank>) -> Self {
        let select = |f: &dyn Fn(&QueryRank) -> bool| Metrics::from_ranks(ranks.iter().filter(|q| f(q)).map(|q| q.rank));
        let slices = vec![
            ("all", select(&|_| true)),
            ("known_relation", select(&|q| q.known_relation)),
            ("new_relation", select(&|q| !q.known_relation)),
            ("head", select(&|q| q.direction == Direction::Head)),
            ("tail", select(&|q| q.direction == Direction::Tail)),
        ];
        Self { slices, ranks }
    }

    pub fn overall(&self) -> Metrics {
        self.slices[0].1.expect("evaluation requires at least one target")
    }

    pub fn slice(&self, name: &str) -> Option<Metrics> {
        self.slices.iter().find(|(n, _)| *n == name).and_then(|(_, m)| *m)
    }

    /// `metric  slice  value  n_queries` rows in fixed order; `NA` for empty slices.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tslice\tvalue\tn_queries\n");
        for (name, m) in &self.slices {
            let values: [(&str, Option<f64>); 5] = [
                ("MR", m.map(|m| m.mr)),
                ("MRR", m.map(|m| m.mrr)),
                ("Hit@1", m.map(|m| m.hit1)),
                ("Hit@3", m.map(|m| m.hit3)),
                ("Hit@10", m.map(|m| m.hit10)),
            ];
            let count = m.map_or(0, |m| m.count);
            for (metric, v) in values {
                let v = v.map_or("NA".to_owned(), |v| format!("{v:.6}"));
                let _ = writeln!(out, "{metric}\t{name}\t{v}\t{count}");
            }
        }
        out
    }

    /// One row per query: target index, direction, known flag, rank.
    pub fn ranks_tsv(&self) -> String {
        let mut out = String::from("target\tdirection\tknown_relation\trank\n");
        for q in &self.ranks {
            let dir = match q.direction {
                Direction::Head => "head",
                Direction::Tail => "tail",
            };
            let _ = writeln!(out, "{}\t{dir}\t{}\t{}", q.target, q.known_relation, q.rank);
        }
        out
    }
}

/// Per base relation of `g`: whether its label also names a training relation.
pub fn known_relations(g: &KnowledgeGraph, training: &Vocab) -> Vec<bool> {
    (0..g.num_base_relations())
        .map(|k| training.id(g.relations().label(k)).is_some())
        .collect()
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions {
    pub ties: TieMode,
    pub unfiltered: bool,
}

/// Ranks every target in both directions. Head queries are tail queries
/// under the reverse relation, so `g` must be augmented.
pub fn evaluate(
    emb: &EmbeddingSet,
    params: &ModelParameters,
    g: &KnowledgeGraph,
    targets: &[Triplet],
    filter: &FilterSet,
    known: &[bool],
    options: EvalOptions,
) -> Result<EvalReport> {
    if !g.is_augmented() {
        return Err(Error::NotAugmented);
    }
    if targets.is_empty() {
        return Err(Error::Config("no evaluation targets".into()));
    }
    let m = g.num_base_relations();
    let scorer = Scorer::new(emb, params);
    let filter = (!options.unfiltered).then_some(filter);
    let mut ranks = Vec::with_capacity(2 * targets.len());
    for (idx, t) in targets.iter().enumerate() {
        g.check_triplet(t)?;
        let known_relation = known.get(t.rel).copied().unwrap_or(false);
        let tail = rank_query(&scorer, t.head, t.rel, t.tail, filter, options.ties)?;
        let head = rank_query(&scorer, t.tail, t.rel + m, t.head, filter, options.ties)?;
        for (direction, rank) in [(Direction::Tail, tail), (Direction::Head, head)] {
            ranks.push(QueryRank {
                target: idx,
                direction,
                known_relation,
                rank,
            });
        }
    }
    Ok(EvalReport::from_ranks(ranks))
}

/// Expected MRR of a uniformly random ranking over `c` candidates.
pub fn random_mrr(c: usize) -> f64 {
    (1..=c).map(|r| 1.0 / r as f64).sum::<f64>() / c as f64
}

/// Expected Hit@k of a uniformly random ranking over `c` candidates.
pub fn random_hits(k: usize, c: usize) -> f64 {
    (k as f64 / c as f64).min(1.0)
}
