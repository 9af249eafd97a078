//! Synthetic corpus with typed relations, community structure and planted
//! two-hop composition rules.
//!
//! Entities carry a type and a community. Base relation `k` links type `k mod T`
//! to a fixed type, mostly within a community. Composition relation `j` holds
//! for a random share of the pairs connected by base relation `j` followed by
//! a base relation starting at the tail type of `j` (see [`SyntheticConfig::rule`]).

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::LabeledTriplet;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub entities: usize,
    pub types: usize,
    pub communities: usize,
    pub base_relations: usize,
    pub compositions: usize,
    /// Maximum edges per head entity and base relation (uniform in `1..=max`).
    pub max_out: usize,
    /// Probability that a base edge stays within the head's community.
    pub intra_community: f64,
    /// Probability that a two-hop path yields a composition edge.
    pub composition_keep: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            entities: 2000,
            types: 2,
            communities: 200,
            base_relations: 16,
            compositions: 8,
            max_out: 3,
            intra_community: 0.95,
            composition_keep: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.types >= 1
            && self.communities >= 1
            && self.base_relations >= self.types
            && self.compositions <= self.base_relations
            && self.entities >= self.types
            && self.max_out >= 1
            && (0.0..=1.0).contains(&self.intra_community)
            && (0.0..=1.0).contains(&self.composition_keep);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid synthetic corpus configuration {self:?}")))
        }
    }

    pub fn num_relations(&self) -> usize {
        self.base_relations + self.compositions
    }

    /// Base relations `(first, second)` whose chain defines composition `j`.
    pub fn rule(&self, j: usize) -> (usize, usize) {
        let (_, tail) = self.base_signature(j);
        let starts: Vec<usize> = (0..self.base_relations)
            .filter(|&b| self.base_signature(b).0 == tail && b != j)
            .collect();
        let second = if starts.is_empty() { j } else { starts[(3 * j + 1) % starts.len()] };
        (j, second)
    }

    fn base_signature(&self, k: usize) -> (usize, usize) {
        let t = self.types;
        let head = k % t;
        (head, (head + 1 + k / t) % t)
    }
}

/// Generates the labeled triplet list (entities `e<i>`, base relations
/// `r<k>`, composition relations `c<k>`).
pub fn corpus(cfg: &SyntheticConfig) -> Vec<LabeledTriplet> {
    cfg.validate().expect("invalid synthetic corpus configuration");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t = cfg.types;
    let kind: Vec<usize> = (0..cfg.entities).map(|i| i % t).collect();
    let community: Vec<usize> = (0..cfg.entities).map(|_| rng.gen_range(0..cfg.communities)).collect();
    let mut by_type_comm = vec![vec![Vec::new(); cfg.communities]; t];
    let mut by_type = vec![Vec::new(); t];
    for e in 0..cfg.entities {
        by_type_comm[kind[e]][community[e]].push(e);
        by_type[kind[e]].push(e);
    }

    let mut base: Vec<Vec<BTreeSet<usize>>> = vec![vec![BTreeSet::new(); cfg.entities]; cfg.base_relations];
    for (k, succ) in base.iter_mut().enumerate() {
        let (ht, tt) = cfg.base_signature(k);
        for &x in &by_type[ht] {
            let count = rng.gen_range(1..=cfg.max_out);
            for _ in 0..count {
                let local = &by_type_comm[tt][community[x]];
                let pool = if !local.is_empty() && rng.gen_bool(cfg.intra_community) {
                    local
                } else {
                    &by_type[tt]
                };
                if let Some(&y) = pool.choose(&mut rng) {
                    if y != x {
                        succ[x].insert(y);
                    }
                }
            }
        }
    }

    let mut out = Vec::new();
    let label = |e: usize| format!("e{e}");
    for (k, succ) in base.iter().enumerate() {
        for (x, ys) in succ.iter().enumerate() {
            for &y in ys {
                out.push([label(x), format!("r{k}"), label(y)]);
            }
        }
    }
    for j in 0..cfg.compositions {
        let (a, b) = cfg.rule(j);
        let (first, second) = (&base[a], &base[b]);
        for (x, succ) in first.iter().enumerate() {
            let mut tails = BTreeSet::new();
            for &y in succ {
                tails.extend(second[y].iter().copied().filter(|&z| z != x));
            }
            for z in tails {
                if rng.gen_bool(cfg.composition_keep) {
                    out.push([label(x), format!("c{j}"), label(z)]);
                }
            }
        }
    }
    out
}
