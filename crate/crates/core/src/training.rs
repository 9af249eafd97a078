//! Training loop with per-epoch fact/target re-splitting and feature redraws.

use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::dataset::{EvalSplit, InferenceSet};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions};
use crate::inference::{default_seed, embed_graph};
use crate::kg::{KnowledgeGraph, SplitState, Triplet};
use crate::model::{loss_and_gradients, FeatureSet, GraphPlan, LossBatch, ModelParameters};
use crate::numerics::Adam;
use crate::unionfind::UnionFind;

/// Fraction of training triplets kept as facts.
pub const FACT_RATIO: f64 = 0.75;

/// Base-triplet indices of a random spanning tree (forest edges taken in a
/// uniformly shuffled order).
pub fn spanning_tree_triplets<R: Rng + ?Sized>(g: &KnowledgeGraph, rng: &mut R) -> Result<Vec<usize>> {
    let triplets = g.base_triplets();
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    order.shuffle(rng);
    let mut uf = UnionFind::new(g.num_entities());
    let mut tree = Vec::with_capacity(g.num_entities().saturating_sub(1));
    for i in order {
        let t = triplets[i];
        if uf.union(t.head, t.tail) {
            tree.push(i);
        }
    }
    if uf.set_count() > 1 {
        return Err(Error::Disconnected {
            components: uf.set_count(),
        });
    }
    tree.sort_unstable();
    Ok(tree)
}

/// Marks a random spanning tree plus one uniformly chosen triplet for every
/// relation the tree misses.
pub(crate) fn forced_facts<R: Rng + ?Sized>(g: &KnowledgeGraph, rng: &mut R) -> Result<Vec<bool>> {
    let triplets = g.base_triplets();
    let mut in_facts = vec![false; triplets.len()];
    for i in spanning_tree_triplets(g, rng)? {
        in_facts[i] = true;
    }
    let m = g.num_base_relations();
    let mut covered = vec![false; m];
    let mut by_relation: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, t) in triplets.iter().enumerate() {
        by_relation[t.rel].push(i);
        if in_facts[i] {
            covered[t.rel] = true;
        }
    }
    for (rel, members) in by_relation.iter().enumerate() {
        if !covered[rel] {
            if let Some(&i) = members.choose(rng) {
                in_facts[i] = true;
            }
        }
    }
    Ok(in_facts)
}

/// Random fact/target split: the forced facts (spanning tree and relation
/// coverage), then a uniform fill up to `round(0.75·|E|)` facts.
pub fn dynamic_split<R: Rng + ?Sized>(g: &KnowledgeGraph, rng: &mut R) -> Result<SplitState> {
    let total = g.num_base_triplets();
    if total == 0 {
        return Err(Error::EmptyGraph("training graph".into()));
    }
    let mut in_facts = forced_facts(g, rng)?;
    let mandatory = in_facts.iter().filter(|&&f| f).count();
    let wanted = ((total as f64) * FACT_RATIO).round() as usize;
    let mut rest: Vec<usize> = (0..total).filter(|&i| !in_facts[i]).collect();
    rest.shuffle(rng);
    let fill = wanted.saturating_sub(mandatory).min(rest.len());
    for &i in &rest[..fill] {
        in_facts[i] = true;
    }
    let (facts, targets) = (0..total).partition(|&i| in_facts[i]);
    Ok(SplitState { facts, targets })
}

/// `count` corruptions of `positive`, each replacing the head or the tail
/// (fair coin) with a uniform entity; draws equal to the positive are redrawn.
pub fn sample_negatives<R: Rng + ?Sized>(
    num_entities: usize,
    positive: Triplet,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Triplet>> {
    if num_entities < 2 {
        return Err(Error::Config("negative sampling needs at least two entities".into()));
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let e = rng.gen_range(0..num_entities);
        let neg = if rng.gen_bool(0.5) {
            Triplet::new(e, positive.rel, positive.tail)
        } else {
            Triplet::new(positive.head, positive.rel, e)
        };
        if neg != positive {
            out.push(neg);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub loss: f64,
    /// Validation `(MRR, Hit@10)` when validated this epoch.
    pub validation: Option<(f64, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\tloss\tval_mrr\tval_hit10\n");
        for r in &self.rows {
            let (mrr, hit) = r
                .validation
                .map_or((String::new(), String::new()), |(m, h)| (format!("{m:.6}"), format!("{h:.6}")));
            let _ = writeln!(out, "{}\t{:.6}\t{mrr}\t{hit}", r.epoch, r.loss);
        }
        out
    }

    /// Validation MRR values in epoch order.
    pub fn validation_mrr(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.validation.map(|v| v.0)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation MRR, or the final ones without validation.
    pub best: ModelParameters,
    pub best_epoch: Option<usize>,
    pub best_mrr: Option<f64>,
    pub log: TrainLog,
}

/// Validation MRR exactly as model selection computes it: inference-time
/// embedding with the graph-derived seed, filtered mid-rank.
pub fn validation_metrics(params: &ModelParameters, val: &InferenceSet) -> Result<(f64, f64)> {
    let emb = embed_graph(params, &val.graph, default_seed(&val.graph))?;
    let report = evaluate(
        &emb,
        params,
        &val.graph,
        val.targets(EvalSplit::Valid),
        &val.filter,
        &val.known,
        EvalOptions::default(),
    )?;
    let m = report.overall();
    Ok((m.mrr, m.hit10))
}

struct EpochData {
    plan: GraphPlan,
    positives: Vec<Triplet>,
}

fn epoch_data(g: &KnowledgeGraph, split: &SplitState, config: &TrainConfig) -> Result<EpochData> {
    let facts = split.fact_graph(g)?;
    let plan = GraphPlan::for_graph(&facts, &config.model)?;
    let m = g.num_base_relations();
    let mut positives = split.target_triplets(g);
    let reversed: Vec<Triplet> = positives.iter().map(|t| Triplet::new(t.tail, t.rel + m, t.head)).collect();
    positives.extend(reversed);
    Ok(EpochData { plan, positives })
}

/// Trains on the un-augmented graph `g`, validating on `validation` when given.
pub fn fit(g: &KnowledgeGraph, validation: Option<&InferenceSet>, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParameters::init(config.model.clone(), &mut rng)?;
    let mut log = TrainLog::default();
    let mut best: Option<(ModelParameters, usize, f64)> = None;
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            best: params,
            best_epoch: None,
            best_mrr: None,
            log,
        });
    }
    if validation.is_some_and(|v| v.valid.is_empty()) {
        return Err(Error::Config("validation set has no targets".into()));
    }
    let mut adam = Adam::new(config.learning_rate, params.tensors());
    let fixed = if config.dynamic_split {
        None
    } else {
        let split = dynamic_split(g, &mut rng)?;
        Some(epoch_data(g, &split, config)?)
    };
    let n = g.num_entities();
    let m_aug = 2 * g.num_base_relations();
    for epoch in 1..=config.epochs {
        let fresh;
        let data = match &fixed {
            Some(d) => d,
            None => {
                let split = dynamic_split(g, &mut rng)?;
                fresh = epoch_data(g, &split, config)?;
                &fresh
            }
        };
        let features = FeatureSet::draw(m_aug, n, &config.model, &mut rng);
        let mut positives = data.positives.clone();
        positives.shuffle(&mut rng);
        let batch_size = config.batch_size.unwrap_or(positives.len()).max(1);
        let mut epoch_loss = 0.0;
        for chunk in positives.chunks(batch_size) {
            let negatives = chunk
                .iter()
                .map(|&p| sample_negatives(n, p, config.negatives, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let batch = LossBatch {
                positives: chunk.to_vec(),
                negatives,
            };
            let (loss, grads) = match loss_and_gradients(&params, &data.plan, &features, &batch) {
                Err(Error::Numerics(_)) => return Err(Error::NonFiniteLoss { epoch }),
                other => other?,
            };
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_loss += loss;
            adam.step(&mut params.tensors_mut(), &grads);
        }
        let mut row = LogRow {
            epoch,
            loss: epoch_loss,
            validation: None,
        };
        if let Some(val) = validation {
            if epoch % config.validate_every == 0 || epoch == config.epochs {
                let (mrr, hit10) = validation_metrics(&params, val)?;
                info!("epoch {epoch}: loss {epoch_loss:.4}, valid MRR {mrr:.4}, Hit@10 {hit10:.4}");
                row.validation = Some((mrr, hit10));
                if best.as_ref().is_none_or(|b| mrr > b.2) {
                    best = Some((params.clone(), epoch, mrr));
                }
            }
        }
        debug!("epoch {epoch}: loss {epoch_loss:.6}");
        log.rows.push(row);
    }
    Ok(match best {
        Some((best, epoch, mrr)) => TrainOutcome {
            best,
            best_epoch: Some(epoch),
            best_mrr: Some(mrr),
            log,
        },
        None => TrainOutcome {
            best: params,
            best_epoch: None,
            best_mrr: None,
            log,
        },
    })
}
