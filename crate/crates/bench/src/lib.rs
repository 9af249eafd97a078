//! Fixtures shared by the benchmarks.

use ingram_core::datagen::synthetic::{corpus, SyntheticConfig};
use ingram_core::{KnowledgeGraph, ModelConfig, ModelParameters};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Reverse-augmented synthetic graph with `entities` entities.
pub fn synthetic_graph(entities: usize) -> KnowledgeGraph {
    let cfg = SyntheticConfig {
        entities,
        communities: (entities / 10).max(1),
        ..SyntheticConfig::default()
    };
    KnowledgeGraph::from_labeled(&corpus(&cfg))
        .augment_reverse()
        .expect("synthetic graph")
}

/// The configuration used for the synthetic benchmark runs.
pub fn bench_config() -> ModelConfig {
    ModelConfig {
        ent_hidden: 32,
        rel_heads: 4,
        ent_heads: 4,
        ..ModelConfig::default()
    }
}

pub fn parameters(config: ModelConfig, seed: u64) -> ModelParameters {
    ModelParameters::init(config, &mut ChaCha8Rng::seed_from_u64(seed)).expect("valid config")
}
