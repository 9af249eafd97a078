use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ingram_bench::{bench_config, parameters, synthetic_graph};
use ingram_core::eval::{rank_query, Scorer};
use ingram_core::model::{embed_with_features, loss_and_gradients, GraphPlan, LossBatch};
use ingram_core::training::sample_negatives;
use ingram_core::{FeatureSet, RelationGraph, TieMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn relation_graph(c: &mut Criterion) {
    let g = synthetic_graph(1000);
    c.bench_function("relation_graph_1000", |b| {
        b.iter(|| RelationGraph::build(black_box(&g), 10).unwrap())
    });
}

fn forward_backward(c: &mut Criterion) {
    let g = synthetic_graph(400);
    let config = bench_config();
    let params = parameters(config.clone(), 1);
    let plan = GraphPlan::for_graph(&g, &config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let features = FeatureSet::draw(g.num_relations(), g.num_entities(), &config, &mut rng);
    let positives: Vec<_> = g.triplets().iter().step_by(4).copied().collect();
    let negatives = positives
        .iter()
        .map(|&t| sample_negatives(g.num_entities(), t, 10, &mut rng).unwrap())
        .collect();
    let batch = LossBatch { positives, negatives };

    let mut group = c.benchmark_group("model_400");
    group.sample_size(20);
    group.bench_function("forward", |b| {
        b.iter(|| embed_with_features(&params, &plan, black_box(&features)).unwrap())
    });
    group.bench_function("forward_backward", |b| {
        b.iter(|| loss_and_gradients(&params, &plan, black_box(&features), &batch).unwrap())
    });
    group.finish();
}

fn ranking(c: &mut Criterion) {
    let g = synthetic_graph(1000);
    let config = bench_config();
    let params = parameters(config.clone(), 1);
    let plan = GraphPlan::for_graph(&g, &config).unwrap();
    let features = FeatureSet::draw(
        g.num_relations(),
        g.num_entities(),
        &config,
        &mut ChaCha8Rng::seed_from_u64(3),
    );
    let emb = embed_with_features(&params, &plan, &features).unwrap();
    let scorer = Scorer::new(&emb, &params);
    let queries: Vec<_> = g.triplets().iter().take(100).copied().collect();
    c.bench_function("rank_100_queries_1000", |b| {
        b.iter(|| {
            queries
                .iter()
                .map(|t| rank_query(&scorer, t.head, t.rel, t.tail, None, TieMode::Mid).unwrap())
                .sum::<f64>()
        })
    });
}

criterion_group!(benches, relation_graph, forward_backward, ranking);
criterion_main!(benches);
