//! Dataset generation, training, checkpointing and inference end to end on
//! a small synthetic corpus.

use std::collections::HashSet;

use ingram_core::checkpoint::{from_bytes, to_bytes};
use ingram_core::datagen::synthetic::{corpus, SyntheticConfig};
use ingram_core::datagen::write_dataset;
use ingram_core::inference::default_seed;
use ingram_core::model::{embed_with_features, GraphPlan};
use ingram_core::relgraph::RelationGraph;
use ingram_core::{
    embed_graph, evaluate, fit, generate, Checkpoint, Dataset, EvalOptions, EvalSplit, FeatureSet, GenConfig,
    KnowledgeGraph, TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn raw() -> KnowledgeGraph {
    KnowledgeGraph::from_labeled(&corpus(&SyntheticConfig {
        entities: 600,
        communities: 6,
        ..SyntheticConfig::default()
    }))
}

fn dataset(p_rel: f64, p_tri: f64, seed: u64) -> (tempfile::TempDir, Dataset) {
    let raw = raw();
    let cfg = GenConfig {
        n_tr: 2,
        n_inf: 2,
        p_rel,
        p_tri,
        hop_cap: 50,
        seed,
    };
    let generated = generate(&raw, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&raw, &generated, &cfg, dir.path()).unwrap();
    let ds = Dataset::load(dir.path()).unwrap();
    (dir, ds)
}

#[test]
fn generated_dataset_respects_inductive_constraints() {
    for seed in 0..3 {
        let (_dir, ds) = dataset(0.4, 1.0, seed);
        let inf = &ds.inference;
        let train_entities: HashSet<&str> = ds.train.entities().labels().iter().map(String::as_str).collect();
        assert!(inf.graph.entities().labels().iter().all(|e| !train_entities.contains(e.as_str())));
        assert_eq!(ds.train.component_count(), 1);

        let msg = inf.graph.num_base_triplets();
        let (v, t) = (inf.valid.len(), inf.test.len());
        let total = msg + v + t;
        let fifth = total as f64 / 5.0;
        assert!((v as f64 - fifth).abs() <= 1.0 && (t as f64 - fifth).abs() <= 1.0, "{msg}/{v}/{t}");
        assert!(inf.known.iter().all(|&k| !k), "every inference relation must be new");
        for target in inf.valid.iter().chain(&inf.test) {
            assert!(!ds.train.relations().labels().contains(&inf.graph.relation_label(target.rel)));
        }
    }
}

#[test]
fn message_graph_covers_every_inference_entity_and_relation() {
    let (_dir, ds) = dataset(0.4, 1.0, 7);
    let g = &ds.inference.graph;
    assert_eq!(g.component_count(), 1);
    let mut seen = vec![false; g.num_entities()];
    let mut rels = vec![false; g.num_base_relations()];
    for t in g.base_triplets() {
        seen[t.head] = true;
        seen[t.tail] = true;
        rels[t.rel] = true;
    }
    assert!(seen.iter().all(|&s| s) && rels.iter().all(|&r| r));
}

fn quick_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::parse(
        "d = 8\nd_hat = 8\nd_prime = 8\nd_hat_prime = 8\nK = 2\nK_hat = 2\nB = 10\nepochs = 6\nvalidate_every = 3",
    )
    .unwrap();
    cfg.seed = seed;
    cfg
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let (_dir, ds) = dataset(0.4, 1.0, 1);
    let a = fit(&ds.train, Some(&ds.inference), &quick_config(9)).unwrap();
    let b = fit(&ds.train, Some(&ds.inference), &quick_config(9)).unwrap();
    let bytes_a = to_bytes(&Checkpoint { params: a.best.clone(), seed: 9 });
    let bytes_b = to_bytes(&Checkpoint { params: b.best.clone(), seed: 9 });
    assert_eq!(bytes_a, bytes_b);
    assert_eq!(a.log.to_tsv(), b.log.to_tsv());
    assert_eq!(from_bytes(&bytes_a).unwrap().params, a.best);

    let c = fit(&ds.train, Some(&ds.inference), &quick_config(10)).unwrap();
    assert_ne!(c.best.checksum(), a.best.checksum());
}

#[test]
fn checkpoint_bin_count_drives_inference_relation_graph() {
    let (_dir, ds) = dataset(0.4, 1.0, 2);
    let trained = fit(&ds.train, None, &quick_config(3)).unwrap();
    let restored = from_bytes(&to_bytes(&Checkpoint { params: trained.best, seed: 3 })).unwrap().params;
    assert_eq!(restored.config.bins, 10);

    let g = &ds.inference.graph;
    let seed = default_seed(g);
    let emb = embed_graph(&restored, g, seed).unwrap();
    let rg = RelationGraph::build(g, 10).unwrap();
    let plan = GraphPlan::new(g, &rg, &restored.config).unwrap();
    let features = FeatureSet::draw(
        g.num_relations(),
        g.num_entities(),
        &restored.config,
        &mut ChaCha8Rng::seed_from_u64(seed),
    );
    let direct = embed_with_features(&restored, &plan, &features).unwrap();
    assert_eq!(emb.entities, direct.entities);
    assert_eq!(emb.relations, direct.relations);
}

#[test]
fn evaluation_is_reproducible_and_reports_every_query() {
    let (_dir, ds) = dataset(0.4, 1.0, 4);
    let trained = fit(&ds.train, Some(&ds.inference), &quick_config(1)).unwrap();
    let inf = &ds.inference;
    let run = || {
        let emb = embed_graph(&trained.best, &inf.graph, default_seed(&inf.graph)).unwrap();
        evaluate(&emb, &trained.best, &inf.graph, inf.targets(EvalSplit::Test), &inf.filter, &inf.known, EvalOptions::default())
            .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.to_tsv(), b.to_tsv());
    assert_eq!(a.ranks.len(), 2 * inf.test.len());
    assert_eq!(a.slice("new_relation").unwrap().count, 2 * inf.test.len());
    assert!(a.slice("known_relation").is_none());
    let c = inf.graph.num_entities() as f64;
    assert!(a.ranks.iter().all(|q| q.rank >= 1.0 && q.rank <= c));
}
