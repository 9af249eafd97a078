#![allow(dead_code)]

use ingram_core::{KnowledgeGraph, LabeledTriplet};
use rand::Rng;

pub fn labeled(lines: &[(&str, &str, &str)]) -> KnowledgeGraph {
    let lines: Vec<LabeledTriplet> = lines
        .iter()
        .map(|(h, r, t)| [h.to_string(), r.to_string(), t.to_string()])
        .collect();
    KnowledgeGraph::from_labeled(&lines)
}

/// Random un-augmented graph with at most `max_entities` entities and
/// `max_relations` relations. Self-loops and repeated pairs are allowed.
pub fn random_graph<R: Rng>(rng: &mut R, max_entities: usize, max_relations: usize, triplets: usize) -> KnowledgeGraph {
    let n = rng.gen_range(2..=max_entities);
    let m = rng.gen_range(1..=max_relations);
    let lines: Vec<LabeledTriplet> = (0..triplets)
        .map(|_| {
            [
                format!("e{}", rng.gen_range(0..n)),
                format!("r{}", rng.gen_range(0..m)),
                format!("e{}", rng.gen_range(0..n)),
            ]
        })
        .collect();
    KnowledgeGraph::from_labeled(&lines)
}

/// Random connected graph: a random tree over all entities plus extra edges.
pub fn random_connected<R: Rng>(rng: &mut R, entities: usize, relations: usize, extra: usize) -> KnowledgeGraph {
    let mut lines: Vec<LabeledTriplet> = Vec::new();
    let mut push = |h: usize, r: usize, t: usize| lines.push([format!("e{h}"), format!("r{r}"), format!("e{t}")]);
    for v in 1..entities {
        let u = rng.gen_range(0..v);
        let r = rng.gen_range(0..relations);
        if rng.gen_bool(0.5) {
            push(u, r, v);
        } else {
            push(v, r, u);
        }
    }
    for _ in 0..extra {
        push(rng.gen_range(0..entities), rng.gen_range(0..relations), rng.gen_range(0..entities));
    }
    KnowledgeGraph::from_labeled(&lines)
}
