use std::time::Instant;

use ingram_core::relgraph::{assign_bins, build_affinity, build_incidence};
use ingram_core::{KnowledgeGraph, RelationGraph};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;

/// `a_ij` straight from the triplet list: one pass per (entity, i, j).
fn brute_force(g: &KnowledgeGraph) -> Vec<Vec<f64>> {
    let (n, m) = (g.num_entities(), g.num_relations());
    let count = |e: usize, r: usize, head: bool| -> f64 {
        g.triplets()
            .iter()
            .filter(|t| t.rel == r && if head { t.head == e } else { t.tail == e })
            .count() as f64
    };
    let degree = |e: usize, head: bool| -> f64 { (0..m).map(|r| count(e, r, head)).sum() };
    let mut a = vec![vec![0.0; m]; m];
    for e in 0..n {
        for head in [true, false] {
            let d = degree(e, head);
            if d == 0.0 {
                continue;
            }
            for (i, row) in a.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v += count(e, i, head) * count(e, j, head) / (d * d);
                }
            }
        }
    }
    a
}

#[test]
fn affinity_matches_entity_loop_oracle_on_200_graphs() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let edges = rand::Rng::gen_range(&mut rng, 1..60);
        let g = common::random_graph(&mut rng, 20, 12, edges).augment_reverse().unwrap();
        let rg = RelationGraph::build(&g, 4).unwrap();
        let dense = rg.to_dense();
        let oracle = brute_force(&g);
        for i in 0..g.num_relations() {
            for j in 0..g.num_relations() {
                assert!((dense[i][j] - oracle[i][j]).abs() <= 1e-12, "a[{i}][{j}] {} vs {}", dense[i][j], oracle[i][j]);
            }
        }

        let inc = build_incidence(&g).unwrap();
        for role in [&inc.head, &inc.tail] {
            for (row, &deg) in role.rows.iter().zip(&role.degrees) {
                if deg == 0 {
                    continue;
                }
                let d2 = f64::from(deg).powi(2);
                let s: f64 = row
                    .iter()
                    .flat_map(|&(_, ci)| row.iter().map(move |&(_, cj)| f64::from(ci) * f64::from(cj) / d2))
                    .sum();
                assert!((s - 1.0).abs() <= 1e-12, "entity contribution sums to {s}");
            }
        }
    }
    assert!(start.elapsed().as_secs_f64() < 10.0, "took {:?}", start.elapsed());
}

#[test]
fn total_affinity_counts_entities_per_role() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let g = common::random_graph(&mut rng, 20, 12, 40).augment_reverse().unwrap();
        let inc = build_incidence(&g).unwrap();
        let active = inc.head.degrees.iter().chain(&inc.tail.degrees).filter(|&&d| d > 0).count();
        let total: f64 = build_affinity(&inc).entries().map(|(_, _, v, _)| v).sum();
        assert!((total - active as f64).abs() < 1e-9);
    }
}

#[test]
fn relabeling_relations_permutes_affinity_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..30 {
        let g = common::random_graph(&mut rng, 15, 8, 30);
        let m = g.num_relations();
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        let lines: Vec<_> = g
            .base_triplets()
            .iter()
            .map(|t| [g.entity_label(t.head).to_string(), format!("x{}", perm[t.rel]), g.entity_label(t.tail).to_string()])
            .collect();
        let h = KnowledgeGraph::from_labeled(&lines).augment_reverse().unwrap();
        let g = g.augment_reverse().unwrap();
        let (a, b) = (RelationGraph::build(&g, 5).unwrap(), RelationGraph::build(&h, 5).unwrap());
        let id = |rel: usize| {
            let k = h.relations().id(&format!("x{}", perm[rel % m])).unwrap();
            if rel < m { k } else { k + m }
        };
        for (i, j, v, bin) in a.entries() {
            assert_eq!(b.get(id(i), id(j)), v);
            assert_eq!(b.bin(id(i), id(j)), Some(bin));
        }
        assert_eq!(a.nnz(), b.nnz());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bins_are_monotone_and_bounded(seed in any::<u64>(), bins in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = common::random_graph(&mut rng, 12, 6, 25).augment_reverse().unwrap();
        let rg = assign_bins(build_affinity(&build_incidence(&g).unwrap()), bins).unwrap();
        let mut entries: Vec<(f64, usize)> = rg.entries().map(|(_, _, v, b)| (v, b)).collect();
        entries.sort_by(|x, y| y.0.total_cmp(&x.0));
        for w in entries.windows(2) {
            prop_assert!(w[0].1 <= w[1].1);
            if w[0].0 == w[1].0 {
                prop_assert_eq!(w[0].1, w[1].1);
            }
        }
        for &(_, b) in &entries {
            prop_assert!((1..=bins).contains(&b));
        }
        let distinct = entries.windows(2).all(|w| w[0].0 != w[1].0);
        if distinct && entries.len() >= bins {
            prop_assert_eq!(entries.last().unwrap().1, bins);
        }
    }

    #[test]
    fn affinity_is_symmetric_and_positive(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = common::random_graph(&mut rng, 20, 12, 30).augment_reverse().unwrap();
        let rg = RelationGraph::build(&g, 10).unwrap();
        for (i, j, v, _) in rg.entries() {
            prop_assert!(v > 0.0);
            prop_assert_eq!(rg.get(j, i), v);
        }
    }
}
