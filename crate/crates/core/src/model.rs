//! Relation-level and entity-level attention aggregation, final projections,
//! the diagonal bilinear score and the margin ranking loss.
//!
//! Relation representations are refined over the relation graph:
//!
//! ```text
//! z_i' = z_i + σ( ‖_heads Σ_{j∈N(i)} α_ij W_h z_j )
//! α_ij = softmax_j( y_h · σ(Θ_h [z_i ‖ z_j]) + c_h[s(i,j)] )
//! ```
//!
//! Entity representations aggregate their own vector (paired with the mean
//! of adjacent relation vectors) and every incoming `(neighbor, relation)`
//! edge, with a joint softmax over the self term and all edges. The score of
//! `(i, k, j)` is `h_iᵀ diag(W̃ z_k) h_j`.
//!
//! Layer inputs of width `Θ·[a‖b‖c]` are evaluated as `Θ_a a + Θ_b b + Θ_c c`
//! with the column blocks of `Θ`, so per-node projections are computed once
//! and gathered per edge.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triplet};
use crate::numerics::{glorot_init, Grads, Index, Tape, Tensor, Var, LEAKY_SLOPE};
use crate::relgraph::RelationGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregator {
    Attention,
    /// Uniform weights `1/|neighborhood|`.
    Mean,
    /// Unit weights.
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelfLoop {
    /// Pair each entity's own vector with the mean of its adjacent relations.
    MeanRelation,
    /// A single learnable vector shared by all entities.
    Learned,
}

impl std::str::FromStr for Aggregator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(Self::Attention),
            "mean" => Ok(Self::Mean),
            "sum" => Ok(Self::Sum),
            _ => Err(Error::Config(format!("unknown aggregator `{s}`"))),
        }
    }
}

impl std::fmt::Display for Aggregator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Attention => "attention",
            Self::Mean => "mean",
            Self::Sum => "sum",
        })
    }
}

impl std::str::FromStr for SelfLoop {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-relation" => Ok(Self::MeanRelation),
            "learned" => Ok(Self::Learned),
            _ => Err(Error::Config(format!("unknown self-loop mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for SelfLoop {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::MeanRelation => "mean-relation",
            Self::Learned => "learned",
        })
    }
}

/// Architecture hyperparameters and ablation switches.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Relation feature / embedding width `d`.
    pub rel_dim: usize,
    /// Entity feature / embedding width `d̂`.
    pub ent_dim: usize,
    /// Hidden relation width `d′`.
    pub rel_hidden: usize,
    /// Hidden entity width `d̂′`.
    pub ent_hidden: usize,
    pub rel_layers: usize,
    pub ent_layers: usize,
    pub rel_heads: usize,
    pub ent_heads: usize,
    pub bins: usize,
    pub margin: f64,
    pub aggregator: Aggregator,
    pub self_loop: SelfLoop,
    pub relation_update: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            rel_dim: 32,
            ent_dim: 32,
            rel_hidden: 32,
            ent_hidden: 128,
            rel_layers: 2,
            ent_layers: 2,
            rel_heads: 8,
            ent_heads: 8,
            bins: 10,
            margin: 2.0,
            aggregator: Aggregator::Attention,
            self_loop: SelfLoop::MeanRelation,
            relation_update: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("rel_dim", self.rel_dim),
            ("ent_dim", self.ent_dim),
            ("rel_hidden", self.rel_hidden),
            ("ent_hidden", self.ent_hidden),
            ("rel_heads", self.rel_heads),
            ("ent_heads", self.ent_heads),
            ("bins", self.bins),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.rel_hidden.is_multiple_of(self.rel_heads) {
            return Err(Error::Config(format!(
                "rel_hidden {} not divisible by rel_heads {}",
                self.rel_hidden, self.rel_heads
            )));
        }
        if !self.ent_hidden.is_multiple_of(self.ent_heads) {
            return Err(Error::Config(format!(
                "ent_hidden {} not divisible by ent_heads {}",
                self.ent_hidden, self.ent_heads
            )));
        }
        if !self.margin.is_finite() || self.margin < 0.0 {
            return Err(Error::Config("margin must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Name and shape of every parameter tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, (usize, usize))> {
        let (d, dh, dp, dhp) = (self.rel_dim, self.ent_dim, self.rel_hidden, self.ent_hidden);
        let mut out = vec![("rel_proj".to_owned(), (dp, d))];
        for l in 0..self.rel_layers {
            out.push((format!("rel.{l}.weight"), (dp, dp)));
            for h in 0..self.rel_heads {
                out.push((format!("rel.{l}.{h}.theta"), (dp, 2 * dp)));
                out.push((format!("rel.{l}.{h}.attn"), (1, dp)));
                out.push((format!("rel.{l}.{h}.bin_bias"), (self.bins, 1)));
            }
        }
        out.push(("ent_proj".to_owned(), (dhp, dh)));
        for l in 0..self.ent_layers {
            out.push((format!("ent.{l}.weight"), (dhp, dhp + dp)));
            for h in 0..self.ent_heads {
                out.push((format!("ent.{l}.{h}.theta"), (dhp, 2 * dhp + dp)));
                out.push((format!("ent.{l}.{h}.attn"), (1, dhp)));
            }
        }
        out.push(("rel_out".to_owned(), (d, dp)));
        out.push(("ent_out".to_owned(), (dh, dhp)));
        out.push(("score_weight".to_owned(), (dh, d)));
        if self.self_loop == SelfLoop::Learned {
            out.push(("self_loop".to_owned(), (1, dp)));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelHead {
    /// `d′ × 2d′`
    pub theta: Tensor,
    /// `1 × d′`
    pub attn: Tensor,
    /// `B × 1` learned bias per affinity bin.
    pub bin_bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelLayer {
    /// `d′ × d′`; head `h` owns output rows `h·d′/K .. (h+1)·d′/K`.
    pub weight: Tensor,
    pub heads: Vec<RelHead>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntHead {
    /// `d̂′ × (2d̂′ + d′)`
    pub theta: Tensor,
    /// `1 × d̂′`
    pub attn: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntLayer {
    /// `d̂′ × (d̂′ + d′)`; head `h` owns output rows `h·d̂′/K̂ .. (h+1)·d̂′/K̂`.
    pub weight: Tensor,
    pub heads: Vec<EntHead>,
}

/// Every trainable tensor plus the configuration that shapes them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    pub config: ModelConfig,
    /// `H`: `d′ × d`
    pub rel_proj: Tensor,
    pub rel_layers: Vec<RelLayer>,
    /// `Ĥ`: `d̂′ × d̂`
    pub ent_proj: Tensor,
    pub ent_layers: Vec<EntLayer>,
    /// `M`: `d × d′`
    pub rel_out: Tensor,
    /// `M̂`: `d̂ × d̂′`
    pub ent_out: Tensor,
    /// `W̃`: `d̂ × d`
    pub score_weight: Tensor,
    pub self_loop: Option<Tensor>,
}

impl ModelParameters {
    /// Glorot-initialized weights; bin biases start at zero.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let tensors = config
            .layout()
            .into_iter()
            .map(|(name, (r, c))| {
                if name.ends_with("bin_bias") {
                    Tensor::zeros(r, c)
                } else {
                    glorot_init(r, c, rng)
                }
            })
            .collect();
        Self::from_tensors(config, tensors)
    }

    /// Rebuilds parameters from tensors listed in [`ModelConfig::layout`] order.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != tensors.len() {
            return Err(Error::Config(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != *shape {
                return Err(Error::Config(format!(
                    "tensor {name}: expected shape {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let rel_proj = next();
        let rel_layers = (0..config.rel_layers)
            .map(|_| {
                let weight = next();
                let heads = (0..config.rel_heads)
                    .map(|_| RelHead {
                        theta: next(),
                        attn: next(),
                        bin_bias: next(),
                    })
                    .collect();
                RelLayer { weight, heads }
            })
            .collect();
        let ent_proj = next();
        let ent_layers = (0..config.ent_layers)
            .map(|_| {
                let weight = next();
                let heads = (0..config.ent_heads)
                    .map(|_| EntHead {
                        theta: next(),
                        attn: next(),
                    })
                    .collect();
                EntLayer { weight, heads }
            })
            .collect();
        let rel_out = next();
        let ent_out = next();
        let score_weight = next();
        let self_loop = (config.self_loop == SelfLoop::Learned).then(&mut next);
        Ok(Self {
            config,
            rel_proj,
            rel_layers,
            ent_proj,
            ent_layers,
            rel_out,
            ent_out,
            score_weight,
            self_loop,
        })
    }

    /// All tensors in layout order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.rel_proj];
        for layer in &self.rel_layers {
            out.push(&layer.weight);
            for h in &layer.heads {
                out.extend([&h.theta, &h.attn, &h.bin_bias]);
            }
        }
        out.push(&self.ent_proj);
        for layer in &self.ent_layers {
            out.push(&layer.weight);
            for h in &layer.heads {
                out.extend([&h.theta, &h.attn]);
            }
        }
        out.extend([&self.rel_out, &self.ent_out, &self.score_weight]);
        out.extend(self.self_loop.as_ref());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.rel_proj];
        for layer in &mut self.rel_layers {
            out.push(&mut layer.weight);
            for h in &mut layer.heads {
                out.extend([&mut h.theta, &mut h.attn, &mut h.bin_bias]);
            }
        }
        out.push(&mut self.ent_proj);
        for layer in &mut self.ent_layers {
            out.push(&mut layer.weight);
            for h in &mut layer.heads {
                out.extend([&mut h.theta, &mut h.attn]);
            }
        }
        out.extend([&mut self.rel_out, &mut self.ent_out, &mut self.score_weight]);
        out.extend(self.self_loop.as_mut());
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn checksum(&self) -> u64 {
        self.tensors()
            .iter()
            .fold(0u64, |acc, t| acc.rotate_left(13) ^ t.checksum())
    }
}

/// Random input features for one graph.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    /// `m × d`
    pub relations: Tensor,
    /// `n × d̂`
    pub entities: Tensor,
}

impl FeatureSet {
    /// Glorot-initialized `m × d` relation and `n × d̂` entity features.
    pub fn draw<R: Rng + ?Sized>(
        num_relations: usize,
        num_entities: usize,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Self {
        let relations = glorot_init(num_relations.max(1), config.rel_dim, rng);
        let entities = glorot_init(num_entities.max(1), config.ent_dim, rng);
        Self {
            relations,
            entities,
        }
    }
}

/// Final relation (`m × d`) and entity (`n × d̂`) embeddings of one graph.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub relations: Tensor,
    pub entities: Tensor,
    pub fingerprint: u64,
    pub seed: u64,
}

/// Index structures for the relation-level aggregation.
#[derive(Clone, Debug)]
pub struct RelationPlan {
    num_relations: usize,
    target: Index,
    source: Index,
    bin: Index,
    uniform: Option<Tensor>,
}

impl RelationPlan {
    pub fn new(rg: &RelationGraph, aggregator: Aggregator) -> Self {
        let mut target = Vec::with_capacity(rg.nnz());
        let mut source = Vec::with_capacity(rg.nnz());
        let mut bin = Vec::with_capacity(rg.nnz());
        for (i, j, _, b) in rg.entries() {
            target.push(i);
            source.push(j);
            bin.push(b.saturating_sub(1));
        }
        let uniform = uniform_weights(&target, rg.num_relations(), aggregator);
        Self {
            num_relations: rg.num_relations(),
            target: target.into(),
            source: source.into(),
            bin: bin.into(),
            uniform,
        }
    }
}

/// Index structures for the entity-level aggregation. Slot `i < n` is the
/// self term of entity `i`; the remaining slots are incoming edges.
#[derive(Clone, Debug)]
pub struct EntityPlan {
    num_entities: usize,
    target: Index,
    source: Index,
    /// Row of `[z̄; z]` paired with each slot.
    zrow: Index,
    edge_rel: Index,
    edge_target: Index,
    inv_degree: Tensor,
    uniform: Option<Tensor>,
}

impl EntityPlan {
    pub fn new(g: &KnowledgeGraph, aggregator: Aggregator) -> Self {
        let n = g.num_entities();
        let mut target: Vec<usize> = (0..n).collect();
        let mut source: Vec<usize> = (0..n).collect();
        let mut zrow: Vec<usize> = (0..n).collect();
        let mut edge_rel = Vec::new();
        let mut edge_target = Vec::new();
        let mut inv_degree = Tensor::zeros(n, 1);
        for i in 0..n {
            let edges = g.in_neighbors(i);
            for &(j, k) in edges {
                target.push(i);
                source.push(j);
                zrow.push(n + k);
                edge_rel.push(k);
                edge_target.push(i);
            }
            if !edges.is_empty() {
                inv_degree.set(i, 0, 1.0 / edges.len() as f64);
            }
        }
        let uniform = uniform_weights(&target, n, aggregator);
        Self {
            num_entities: n,
            target: target.into(),
            source: source.into(),
            zrow: zrow.into(),
            edge_rel: edge_rel.into(),
            edge_target: edge_target.into(),
            inv_degree,
            uniform,
        }
    }
}

fn uniform_weights(target: &[usize], segments: usize, aggregator: Aggregator) -> Option<Tensor> {
    match aggregator {
        Aggregator::Attention => None,
        Aggregator::Sum => Some(Tensor::filled(target.len(), 1, 1.0)),
        Aggregator::Mean => {
            let mut count = vec![0usize; segments];
            for &t in target {
                count[t] += 1;
            }
            let w = target.iter().map(|&t| 1.0 / count[t] as f64).collect();
            Some(Tensor::from_vec(target.len(), 1, w))
        }
    }
}

/// Both plans for one augmented graph.
#[derive(Clone, Debug)]
pub struct GraphPlan {
    pub relation: RelationPlan,
    pub entity: EntityPlan,
}

impl GraphPlan {
    pub fn new(g: &KnowledgeGraph, rg: &RelationGraph, config: &ModelConfig) -> Result<Self> {
        if rg.num_bins() != config.bins {
            return Err(Error::Config(format!(
                "relation graph has {} bins, model expects {}",
                rg.num_bins(),
                config.bins
            )));
        }
        if rg.num_relations() != g.num_relations() {
            return Err(Error::Config("relation graph does not match knowledge graph".into()));
        }
        Ok(Self {
            relation: RelationPlan::new(rg, config.aggregator),
            entity: EntityPlan::new(g, config.aggregator),
        })
    }

    /// Builds the relation graph with the model's bin count, then both plans.
    pub fn for_graph(g: &KnowledgeGraph, config: &ModelConfig) -> Result<Self> {
        let rg = RelationGraph::build(g, config.bins)?;
        Self::new(g, &rg, config)
    }
}

struct BoundRelHead {
    theta: Var,
    attn: Var,
    bin_bias: Var,
}

struct BoundEntHead {
    theta: Var,
    attn: Var,
}

/// Parameters recorded as tape leaves.
pub struct BoundParams {
    flat: Vec<Var>,
    rel_proj: Var,
    rel_layers: Vec<(Var, Vec<BoundRelHead>)>,
    ent_proj: Var,
    ent_layers: Vec<(Var, Vec<BoundEntHead>)>,
    rel_out: Var,
    ent_out: Var,
    score_weight: Var,
    self_loop: Option<Var>,
}

impl BoundParams {
    pub fn bind(params: &ModelParameters, tape: &mut Tape) -> Result<Self> {
        let flat = params
            .tensors()
            .into_iter()
            .map(|t| tape.leaf(t.clone()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut it = flat.iter().copied();
        let mut next = || it.next().expect("layout");
        let rel_proj = next();
        let rel_layers = params
            .rel_layers
            .iter()
            .map(|l| {
                let w = next();
                let heads = l
                    .heads
                    .iter()
                    .map(|_| BoundRelHead {
                        theta: next(),
                        attn: next(),
                        bin_bias: next(),
                    })
                    .collect();
                (w, heads)
            })
            .collect();
        let ent_proj = next();
        let ent_layers = params
            .ent_layers
            .iter()
            .map(|l| {
                let w = next();
                let heads = l
                    .heads
                    .iter()
                    .map(|_| BoundEntHead {
                        theta: next(),
                        attn: next(),
                    })
                    .collect();
                (w, heads)
            })
            .collect();
        let rel_out = next();
        let ent_out = next();
        let score_weight = next();
        let self_loop = params.self_loop.as_ref().map(|_| next());
        Ok(Self {
            flat,
            rel_proj,
            rel_layers,
            ent_proj,
            ent_layers,
            rel_out,
            ent_out,
            score_weight,
            self_loop,
        })
    }

    /// Gradients in layout order, zero for parameters the output did not reach.
    pub fn gradients(&self, grads: &Grads, params: &ModelParameters) -> Vec<Tensor> {
        self.flat
            .iter()
            .zip(params.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t))
            .collect()
    }
}

/// Tape handles produced by one forward pass.
pub struct Encoded {
    /// `z⁽ᴸ⁾`, `m × d′`
    pub rel_repr: Var,
    /// `h⁽ᴸ̂⁾`, `n × d̂′`
    pub ent_repr: Var,
    /// `Mz`, `m × d`
    pub rel_emb: Var,
    /// `M̂h`, `n × d̂`
    pub ent_emb: Var,
    /// Attention coefficients per relation layer (`nnz × K`, one column per head).
    pub rel_attention: Vec<Var>,
    /// Attention coefficients per entity layer (`(n + edges) × K̂`).
    pub ent_attention: Vec<Var>,
}

/// Stacks column block `start..start + len` of every head's `Θ` into one
/// `(K·rows) × len` matrix, so all heads project in a single product.
fn stacked_block(tape: &mut Tape, thetas: &[Var], start: usize, len: usize) -> Result<Var> {
    let blocks = thetas
        .iter()
        .map(|&t| tape.slice_cols(t, start, len))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(tape.concat_rows(&blocks)?)
}

fn relation_layers(
    tape: &mut Tape,
    bound: &BoundParams,
    config: &ModelConfig,
    plan: &RelationPlan,
    z0: Var,
    attention: &mut Vec<Var>,
) -> Result<Var> {
    if !config.relation_update {
        return Ok(z0);
    }
    let dp = config.rel_hidden;
    let m = plan.num_relations;
    let uniform = plan.uniform.clone().map(|u| tape.leaf(u)).transpose()?;
    let mut z = z0;
    for (weight, heads) in &bound.rel_layers {
        // column block h of the messages belongs to head h
        let messages = tape.matmul_t(z, *weight)?;
        let messages = tape.gather(messages, &plan.source)?;
        let weighted = match uniform {
            Some(u) => tape.scale_rows(messages, u)?,
            None => {
                let thetas: Vec<Var> = heads.iter().map(|h| h.theta).collect();
                let ta = stacked_block(tape, &thetas, 0, dp)?;
                let tb = stacked_block(tape, &thetas, dp, dp)?;
                let pa = tape.matmul_t(z, ta)?;
                let pb = tape.matmul_t(z, tb)?;
                let ga = tape.gather(pa, &plan.target)?;
                let gb = tape.gather(pb, &plan.source)?;
                let pre = tape.add(ga, gb)?;
                let act = tape.leaky_relu(pre, LEAKY_SLOPE)?;
                let attn: Vec<Var> = heads.iter().map(|h| h.attn).collect();
                let attn = tape.concat_cols(&attn)?;
                let prod = tape.mul_row(act, attn)?;
                let logit = tape.block_sum(prod, heads.len())?;
                let biases: Vec<Var> = heads.iter().map(|h| h.bin_bias).collect();
                let biases = tape.concat_cols(&biases)?;
                let bias = tape.gather(biases, &plan.bin)?;
                let logit = tape.add(logit, bias)?;
                let alpha = tape.segment_softmax(logit, &plan.target, m)?;
                attention.push(alpha);
                tape.scale_blocks(messages, alpha)?
            }
        };
        let agg = tape.segment_sum(weighted, &plan.target, m)?;
        let act = tape.leaky_relu(agg, LEAKY_SLOPE)?;
        z = tape.add(z, act)?;
    }
    Ok(z)
}

fn mean_relation_rows(tape: &mut Tape, plan: &EntityPlan, z: Var) -> Result<Var> {
    let per_edge = tape.gather(z, &plan.edge_rel)?;
    let summed = tape.segment_sum(per_edge, &plan.edge_target, plan.num_entities)?;
    let inv = tape.leaf(plan.inv_degree.clone())?;
    Ok(tape.scale_rows(summed, inv)?)
}

fn entity_layers(
    tape: &mut Tape,
    bound: &BoundParams,
    config: &ModelConfig,
    plan: &EntityPlan,
    z: Var,
    h0: Var,
    attention: &mut Vec<Var>,
) -> Result<Var> {
    let (dp, dhp) = (config.rel_hidden, config.ent_hidden);
    let n = plan.num_entities;
    let self_rows = match bound.self_loop {
        Some(v) => {
            let zeros: Index = vec![0usize; n].into();
            tape.gather(v, &zeros)?
        }
        None => mean_relation_rows(tape, plan, z)?,
    };
    // rows 0..n: self-loop relation vector per entity; rows n..n+m: z
    let zext = tape.concat_rows(&[self_rows, z])?;
    let uniform = plan.uniform.clone().map(|u| tape.leaf(u)).transpose()?;
    let mut h = h0;
    for (weight, heads) in &bound.ent_layers {
        let w_ent = tape.slice_cols(*weight, 0, dhp)?;
        let w_rel = tape.slice_cols(*weight, dhp, dp)?;
        let mh = tape.matmul_t(h, w_ent)?;
        let mh = tape.gather(mh, &plan.source)?;
        let mz = tape.matmul_t(zext, w_rel)?;
        let mz = tape.gather(mz, &plan.zrow)?;
        let messages = tape.add(mh, mz)?;
        let weighted = match uniform {
            Some(u) => tape.scale_rows(messages, u)?,
            None => {
                let thetas: Vec<Var> = heads.iter().map(|h| h.theta).collect();
                let ta = stacked_block(tape, &thetas, 0, dhp)?;
                let tb = stacked_block(tape, &thetas, dhp, dhp)?;
                let tc = stacked_block(tape, &thetas, 2 * dhp, dp)?;
                let pa = tape.matmul_t(h, ta)?;
                let pb = tape.matmul_t(h, tb)?;
                let pc = tape.matmul_t(zext, tc)?;
                let ga = tape.gather(pa, &plan.target)?;
                let gb = tape.gather(pb, &plan.source)?;
                let gc = tape.gather(pc, &plan.zrow)?;
                let pre = tape.add(ga, gb)?;
                let pre = tape.add(pre, gc)?;
                let act = tape.leaky_relu(pre, LEAKY_SLOPE)?;
                let attn: Vec<Var> = heads.iter().map(|h| h.attn).collect();
                let attn = tape.concat_cols(&attn)?;
                let prod = tape.mul_row(act, attn)?;
                let logit = tape.block_sum(prod, heads.len())?;
                let beta = tape.segment_softmax(logit, &plan.target, n)?;
                attention.push(beta);
                tape.scale_blocks(messages, beta)?
            }
        };
        let agg = tape.segment_sum(weighted, &plan.target, n)?;
        let act = tape.leaky_relu(agg, LEAKY_SLOPE)?;
        h = tape.add(h, act)?;
    }
    Ok(h)
}

/// Records the full forward pass (both aggregation stages and projections).
pub fn encode(
    tape: &mut Tape,
    bound: &BoundParams,
    config: &ModelConfig,
    plan: &GraphPlan,
    features: &FeatureSet,
) -> Result<Encoded> {
    let (m, n) = (plan.relation.num_relations, plan.entity.num_entities);
    if features.relations.shape() != (m, config.rel_dim) || features.entities.shape() != (n, config.ent_dim) {
        return Err(Error::Config(format!(
            "feature shapes {:?}/{:?} do not match graph ({m} relations, {n} entities)",
            features.relations.shape(),
            features.entities.shape()
        )));
    }
    let mut rel_attention = Vec::new();
    let mut ent_attention = Vec::new();
    let x = tape.leaf(features.relations.clone())?;
    let z0 = tape.matmul_t(x, bound.rel_proj)?;
    let z = relation_layers(tape, bound, config, &plan.relation, z0, &mut rel_attention)?;
    let xh = tape.leaf(features.entities.clone())?;
    let h0 = tape.matmul_t(xh, bound.ent_proj)?;
    let h = entity_layers(tape, bound, config, &plan.entity, z, h0, &mut ent_attention)?;
    let rel_emb = tape.matmul_t(z, bound.rel_out)?;
    let ent_emb = tape.matmul_t(h, bound.ent_out)?;
    Ok(Encoded {
        rel_repr: z,
        ent_repr: h,
        rel_emb,
        ent_emb,
        rel_attention,
        ent_attention,
    })
}

/// Scores `(head, rel, tail)` triplets on the tape, returning an `len × 1` column.
pub fn score_on_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    enc: &Encoded,
    triplets: &[Triplet],
) -> Result<Var> {
    let rel_diag = tape.matmul_t(enc.rel_emb, bound.score_weight)?;
    let heads: Index = triplets.iter().map(|t| t.head).collect::<Vec<_>>().into();
    let rels: Index = triplets.iter().map(|t| t.rel).collect::<Vec<_>>().into();
    let tails: Index = triplets.iter().map(|t| t.tail).collect::<Vec<_>>().into();
    let h = tape.gather(enc.ent_emb, &heads)?;
    let r = tape.gather(rel_diag, &rels)?;
    let t = tape.gather(enc.ent_emb, &tails)?;
    let hr = tape.mul(h, r)?;
    let hrt = tape.mul(hr, t)?;
    Ok(tape.row_sum(hrt)?)
}

/// Positives paired with their corrupted triplets.
#[derive(Clone, Debug, Default)]
pub struct LossBatch {
    pub positives: Vec<Triplet>,
    /// `negatives[p]` belongs to `positives[p]`.
    pub negatives: Vec<Vec<Triplet>>,
}

fn check_batch(batch: &LossBatch) -> Result<()> {
    if batch.negatives.len() != batch.positives.len() {
        return Err(Error::Config("every positive needs a negative list".into()));
    }
    if batch.negatives.iter().any(Vec::is_empty) {
        return Err(Error::Config("empty negative list".into()));
    }
    Ok(())
}

/// `Σ_pos Σ_neg max(0, γ − f(pos) + f(neg))` on the tape.
pub fn margin_loss_on_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    enc: &Encoded,
    batch: &LossBatch,
    margin: f64,
) -> Result<Var> {
    check_batch(batch)?;
    let pos = score_on_tape(tape, bound, enc, &batch.positives)?;
    let flat: Vec<Triplet> = batch.negatives.iter().flatten().copied().collect();
    let owner: Index = batch
        .negatives
        .iter()
        .enumerate()
        .flat_map(|(p, negs)| std::iter::repeat_n(p, negs.len()))
        .collect::<Vec<_>>()
        .into();
    let neg = score_on_tape(tape, bound, enc, &flat)?;
    let pos = tape.gather(pos, &owner)?;
    let diff = tape.sub(neg, pos)?;
    let shifted = tape.add_const(diff, margin)?;
    let hinge = tape.relu(shifted)?;
    Ok(tape.sum(hinge)?)
}

/// Loss and gradients (layout order) for one batch on one graph.
pub fn loss_and_gradients(
    params: &ModelParameters,
    plan: &GraphPlan,
    features: &FeatureSet,
    batch: &LossBatch,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(params, &mut tape)?;
    let enc = encode(&mut tape, &bound, &params.config, plan, features)?;
    let loss = margin_loss_on_tape(&mut tape, &bound, &enc, batch, params.config.margin)?;
    let value = tape.value(loss).get(0, 0);
    let grads = tape.backward(loss)?;
    Ok((value, bound.gradients(&grads, params)))
}

/// Loss value only.
pub fn loss_value(
    params: &ModelParameters,
    plan: &GraphPlan,
    features: &FeatureSet,
    batch: &LossBatch,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(params, &mut tape)?;
    let enc = encode(&mut tape, &bound, &params.config, plan, features)?;
    let loss = margin_loss_on_tape(&mut tape, &bound, &enc, batch, params.config.margin)?;
    Ok(tape.value(loss).get(0, 0))
}

/// Final relation representations `z⁽ᴸ⁾` (`m × d′`) over a relation graph.
pub fn relation_forward(params: &ModelParameters, rg: &RelationGraph, features: &Tensor) -> Result<Tensor> {
    if rg.num_bins() != params.config.bins {
        return Err(Error::Config("bin count mismatch".into()));
    }
    let plan = RelationPlan::new(rg, params.config.aggregator);
    let mut tape = Tape::new();
    let bound = BoundParams::bind(params, &mut tape)?;
    let x = tape.leaf(features.clone())?;
    let z0 = tape.matmul_t(x, bound.rel_proj)?;
    let z = relation_layers(&mut tape, &bound, &params.config, &plan, z0, &mut Vec::new())?;
    Ok(tape.value(z).clone())
}

/// Multiplicity-weighted mean of the final representations of the relations
/// on edges entering `entity`. Zero when the entity has no incoming edge.
pub fn mean_adjacent_relation(g: &KnowledgeGraph, rel_repr: &Tensor, entity: usize) -> Vec<f64> {
    let edges = g.in_neighbors(entity);
    let mut out = vec![0.0; rel_repr.cols()];
    for &(_, k) in edges {
        for (o, &v) in out.iter_mut().zip(rel_repr.row(k)) {
            *o += v;
        }
    }
    if !edges.is_empty() {
        let inv = 1.0 / edges.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
    }
    out
}

/// Final entity representations `h⁽ᴸ̂⁾` (`n × d̂′`) given relation representations.
pub fn entity_forward(
    params: &ModelParameters,
    g: &KnowledgeGraph,
    rel_repr: &Tensor,
    features: &Tensor,
) -> Result<Tensor> {
    let plan = EntityPlan::new(g, params.config.aggregator);
    let mut tape = Tape::new();
    let bound = BoundParams::bind(params, &mut tape)?;
    let z = tape.leaf(rel_repr.clone())?;
    let xh = tape.leaf(features.clone())?;
    let h0 = tape.matmul_t(xh, bound.ent_proj)?;
    let h = entity_layers(&mut tape, &bound, &params.config, &plan, z, h0, &mut Vec::new())?;
    Ok(tape.value(h).clone())
}

/// `z_k = M z_k⁽ᴸ⁾`, `h_i = M̂ h_i⁽ᴸ̂⁾`.
pub fn project_final(params: &ModelParameters, rel_repr: &Tensor, ent_repr: &Tensor) -> EmbeddingSet {
    EmbeddingSet {
        relations: rel_repr.matmul_t(&params.rel_out),
        entities: ent_repr.matmul_t(&params.ent_out),
        fingerprint: 0,
        seed: 0,
    }
}

/// `W̃ z_k` for every relation (`m × d̂`).
pub fn relation_diagonals(emb: &EmbeddingSet, params: &ModelParameters) -> Tensor {
    emb.relations.matmul_t(&params.score_weight)
}

/// `h_iᵀ diag(W̃ z_k) h_j`.
pub fn score(emb: &EmbeddingSet, params: &ModelParameters, t: Triplet) -> Result<f64> {
    let (n, m) = (emb.entities.rows(), emb.relations.rows());
    for (kind, id, count) in [("entity", t.head, n), ("relation", t.rel, m), ("entity", t.tail, n)] {
        if id >= count {
            return Err(Error::IdOutOfRange { kind, id, count });
        }
    }
    let zk = emb.relations.row(t.rel);
    let (hi, hj) = (emb.entities.row(t.head), emb.entities.row(t.tail));
    let mut total = 0.0;
    for c in 0..params.score_weight.rows() {
        let diag: f64 = params.score_weight.row(c).iter().zip(zk).map(|(w, z)| w * z).sum();
        total += hi[c] * diag * hj[c];
    }
    Ok(total)
}

/// Margin ranking loss evaluated from fixed embeddings.
pub fn margin_loss(emb: &EmbeddingSet, params: &ModelParameters, batch: &LossBatch) -> Result<f64> {
    check_batch(batch)?;
    let mut total = 0.0;
    for (pos, negs) in batch.positives.iter().zip(&batch.negatives) {
        let fp = score(emb, params, *pos)?;
        for neg in negs {
            total += (params.config.margin - fp + score(emb, params, *neg)?).max(0.0);
        }
    }
    Ok(total)
}

/// Runs the forward pass without recording gradients and returns the embeddings.
pub fn embed_with_features(
    params: &ModelParameters,
    plan: &GraphPlan,
    features: &FeatureSet,
) -> Result<EmbeddingSet> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(params, &mut tape)?;
    let enc = encode(&mut tape, &bound, &params.config, plan, features)?;
    Ok(EmbeddingSet {
        relations: tape.value(enc.rel_emb).clone(),
        entities: tape.value(enc.ent_emb).clone(),
        fingerprint: 0,
        seed: 0,
    })
}

/// Attention coefficients of one forward pass, with their segment ids.
pub struct AttentionTrace {
    pub relation: Vec<(Arc<[usize]>, Tensor)>,
    pub entity: Vec<(Arc<[usize]>, Tensor)>,
}

pub fn attention_trace(params: &ModelParameters, plan: &GraphPlan, features: &FeatureSet) -> Result<AttentionTrace> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(params, &mut tape)?;
    let enc = encode(&mut tape, &bound, &params.config, plan, features)?;
    Ok(AttentionTrace {
        relation: enc
            .rel_attention
            .iter()
            .map(|&v| (plan.relation.target.clone(), tape.value(v).clone()))
            .collect(),
        entity: enc
            .ent_attention
            .iter()
            .map(|&v| (plan.entity.target.clone(), tape.value(v).clone()))
            .collect(),
    })
}
