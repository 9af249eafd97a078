//! Embeddings for an unseen graph from frozen parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::model::{embed_with_features, EmbeddingSet, FeatureSet, GraphPlan, ModelParameters};

/// Seed used when none is given: the graph's label fingerprint.
pub fn default_seed(g: &KnowledgeGraph) -> u64 {
    g.fingerprint()
}

/// Builds the relation graph of `g` with the model's bin count, draws fresh
/// Glorot features from `seed`, and runs the frozen forward pass. Only
/// structure-derived indices are used; labels are never looked up.
pub fn embed_graph(params: &ModelParameters, g: &KnowledgeGraph, seed: u64) -> Result<EmbeddingSet> {
    if g.num_triplets() == 0 {
        return Err(Error::EmptyGraph("inference graph".into()));
    }
    if !g.is_augmented() {
        return Err(Error::NotAugmented);
    }
    let plan = GraphPlan::for_graph(g, &params.config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = FeatureSet::draw(g.num_relations(), g.num_entities(), &params.config, &mut rng);
    let mut emb = embed_with_features(params, &plan, &features)?;
    emb.fingerprint = g.fingerprint();
    emb.seed = seed;
    Ok(emb)
}
