use ingram_core::model::{attention_trace, embed_with_features, score, GraphPlan};
use ingram_core::numerics::Tensor;
use ingram_core::{FeatureSet, KnowledgeGraph, ModelConfig, ModelParameters, Triplet};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

fn small_config(rng: &mut impl Rng) -> ModelConfig {
    let rel_heads = [1, 2, 4][rng.gen_range(0..3)];
    let ent_heads = [1, 2, 4][rng.gen_range(0..3)];
    ModelConfig {
        rel_dim: 6,
        ent_dim: 5,
        rel_hidden: 8,
        ent_hidden: 8,
        rel_layers: rng.gen_range(1..=3),
        ent_layers: rng.gen_range(1..=3),
        rel_heads,
        ent_heads,
        bins: rng.gen_range(1..=6),
        ..ModelConfig::default()
    }
}

/// Perturbs every parameter (including bin biases) away from initialization.
fn random_params(config: ModelConfig, rng: &mut impl Rng) -> ModelParameters {
    let mut params = ModelParameters::init(config, rng).unwrap();
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
    }
    params
}

fn max_group_deviation(targets: &[usize], alpha: &Tensor) -> f64 {
    let groups = targets.iter().max().map_or(0, |&t| t + 1);
    let mut sums = vec![vec![0.0; alpha.cols()]; groups];
    for (e, &t) in targets.iter().enumerate() {
        for (k, s) in sums[t].iter_mut().enumerate() {
            *s += alpha.get(e, k);
        }
    }
    sums.iter()
        .filter(|row| row.iter().any(|&s| s != 0.0))
        .flatten()
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max)
}

#[test]
fn attention_weights_sum_to_one_per_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..60 {
        let g = common::random_graph(&mut rng, 20, 8, 40).augment_reverse().unwrap();
        let config = small_config(&mut rng);
        let params = random_params(config.clone(), &mut rng);
        let plan = GraphPlan::for_graph(&g, &config).unwrap();
        let features = FeatureSet::draw(g.num_relations(), g.num_entities(), &config, &mut rng);
        let trace = attention_trace(&params, &plan, &features).unwrap();
        assert_eq!(trace.relation.len(), config.rel_layers);
        assert_eq!(trace.entity.len(), config.ent_layers);
        for (targets, alpha) in trace.relation.iter().chain(&trace.entity) {
            assert!(alpha.data().iter().all(|&a| (0.0..=1.0).contains(&a)));
            let dev = max_group_deviation(targets, alpha);
            assert!(dev <= 1e-12, "attention sums deviate by {dev}");
        }
        // every entity has at least its self-loop slot
        for (targets, _) in &trace.entity {
            let mut seen = vec![false; g.num_entities()];
            targets.iter().for_each(|&t| seen[t] = true);
            assert!(seen.iter().all(|&s| s));
        }
    }
}

struct Relabeled {
    graph: KnowledgeGraph,
    /// original entity id → relabeled id
    entity: Vec<usize>,
    /// original (augmented) relation id → relabeled id
    relation: Vec<usize>,
}

/// Renames entities and relations through random permutations and shuffles
/// the triplet order, so ids in the copy differ from the original.
fn relabel(g: &KnowledgeGraph, rng: &mut impl Rng) -> Relabeled {
    let (n, m) = (g.num_entities(), g.num_base_relations());
    let mut pv: Vec<usize> = (0..n).collect();
    pv.shuffle(rng);
    let mut pr: Vec<usize> = (0..m).collect();
    pr.shuffle(rng);
    let mut lines: Vec<_> = g
        .base_triplets()
        .iter()
        .map(|t| [format!("v{}", pv[t.head]), format!("q{}", pr[t.rel]), format!("v{}", pv[t.tail])])
        .collect();
    lines.shuffle(rng);
    let graph = KnowledgeGraph::from_labeled(&lines).augment_reverse().unwrap();
    let entity = (0..n).map(|i| graph.entities().id(&format!("v{}", pv[i])).unwrap()).collect();
    let relation = (0..2 * m)
        .map(|r| {
            let k = graph.relations().id(&format!("q{}", pr[r % m])).unwrap();
            if r < m { k } else { k + m }
        })
        .collect();
    Relabeled { graph, entity, relation }
}

fn permute_rows(t: &Tensor, map: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(t.rows(), t.cols());
    for (i, &j) in map.iter().enumerate() {
        for c in 0..t.cols() {
            out.set(j, c, t.get(i, c));
        }
    }
    out
}

#[test]
fn scores_are_equivariant_under_relabeling() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..40 {
        let g = common::random_connected(&mut rng, 15, 5, 25).augment_reverse().unwrap();
        let config = small_config(&mut rng);
        let params = random_params(config.clone(), &mut rng);
        let copy = relabel(&g, &mut rng);
        let features = FeatureSet::draw(g.num_relations(), g.num_entities(), &config, &mut rng);
        let permuted = FeatureSet {
            relations: permute_rows(&features.relations, &copy.relation),
            entities: permute_rows(&features.entities, &copy.entity),
        };
        let a = embed_with_features(&params, &GraphPlan::for_graph(&g, &config).unwrap(), &features).unwrap();
        let b = embed_with_features(&params, &GraphPlan::for_graph(&copy.graph, &config).unwrap(), &permuted).unwrap();
        let n = g.num_entities();
        for h in 0..n {
            for r in 0..g.num_relations() {
                for t in 0..n {
                    let sa = score(&a, &params, Triplet::new(h, r, t)).unwrap();
                    let sb = score(&b, &params, Triplet::new(copy.entity[h], copy.relation[r], copy.entity[t])).unwrap();
                    assert!((sa - sb).abs() <= 1e-9, "case {case}: {sa} vs {sb}");
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn attention_normalization_holds_for_any_seed(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = common::random_graph(&mut rng, 12, 6, 20).augment_reverse().unwrap();
        let config = small_config(&mut rng);
        let params = random_params(config.clone(), &mut rng);
        let plan = GraphPlan::for_graph(&g, &config).unwrap();
        let features = FeatureSet::draw(g.num_relations(), g.num_entities(), &config, &mut rng);
        let trace = attention_trace(&params, &plan, &features).unwrap();
        for (targets, alpha) in trace.relation.iter().chain(&trace.entity) {
            prop_assert!(max_group_deviation(targets, alpha) <= 1e-12);
        }
    }
}
