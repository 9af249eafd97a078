//! Inductive knowledge graph embedding with relation graphs and two-level
//! attention: embeddings for unseen relations and entities are computed from
//! graph structure alone, using parameters trained on a different graph.

pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod inference;
pub mod kg;
pub mod model;
pub mod numerics;
pub mod relgraph;
pub mod training;
pub mod unionfind;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use config::TrainConfig;
pub use datagen::{generate, GenConfig};
pub use dataset::{Dataset, EvalSplit, InferenceSet};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalOptions, EvalReport, FilterSet, Metrics, TieMode};
pub use inference::embed_graph;
pub use kg::{parse_triplets, KnowledgeGraph, LabeledTriplet, SplitState, Triplet, Vocab};
pub use model::{Aggregator, EmbeddingSet, FeatureSet, ModelConfig, ModelParameters, SelfLoop};
pub use numerics::Tensor;
pub use relgraph::{IncidenceCounts, RelationGraph};
pub use training::{dynamic_split, fit, TrainLog, TrainOutcome};
