//! Carves a raw triplet corpus into a training graph and a disjoint inference
//! graph whose triplets use a controllable share of unseen relations.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{MSG_FILE, TEST_FILE, TRAIN_FILE, VALID_FILE};
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, LabeledTriplet, Triplet};
use crate::training::forced_facts;
use crate::unionfind::UnionFind;

pub mod synthetic;

pub const META_FILE: &str = "meta.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    /// Seed entities for the training graph.
    pub n_tr: usize,
    /// Seed entities for the inference graph.
    pub n_inf: usize,
    /// Fraction of relations reserved for inference.
    pub p_rel: f64,
    /// Target fraction of inference triplets that use reserved relations.
    pub p_tri: f64,
    /// Maximum neighbors kept per entity per hop.
    pub hop_cap: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_tr: 15,
            n_inf: 80,
            p_rel: 0.4,
            p_tri: 1.0,
            hop_cap: 50,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_rel) || !(0.0..=1.0).contains(&self.p_tri) {
            return Err(Error::Config("p_rel and p_tri must lie in [0, 1]".into()));
        }
        if self.n_tr == 0 || self.n_inf == 0 {
            return Err(Error::Config("n_tr and n_inf must be positive".into()));
        }
        Ok(())
    }
}

/// Counts and achieved ratios of one generation run.
#[derive(Clone, Debug, PartialEq)]
pub struct GenStats {
    pub train_entities: usize,
    pub train_relations: usize,
    pub train_triplets: usize,
    pub inf_entities: usize,
    pub inf_relations: usize,
    pub inf_triplets: usize,
    pub msg: usize,
    pub valid: usize,
    pub test: usize,
    /// Share of inference triplets whose relation is reserved for inference.
    pub achieved_p_tri: f64,
    /// Share of test triplets whose relation does not occur in training.
    pub test_new_fraction: f64,
}

/// Output of [`generate`], as raw-graph triplet indices.
#[derive(Clone, Debug)]
pub struct Generated {
    pub train: Vec<usize>,
    pub msg: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub stats: GenStats,
}

fn undirected_adjacency(n: usize, triplets: &[Triplet], edges: &[usize]) -> Vec<Vec<usize>> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &i in edges {
        let t = triplets[i];
        if t.head != t.tail {
            adj[t.head].insert(t.tail);
            adj[t.tail].insert(t.head);
        }
    }
    adj.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// Triplets (by index) of the largest connected component of `edges`; ties
/// go to the component holding the smallest entity id.
fn giant_component(n: usize, triplets: &[Triplet], edges: &[usize]) -> Vec<usize> {
    if edges.is_empty() {
        return Vec::new();
    }
    let mut uf = UnionFind::new(n);
    for &i in edges {
        uf.union(triplets[i].head, triplets[i].tail);
    }
    let mut counts = vec![0usize; n];
    let mut first = vec![usize::MAX; n];
    for &i in edges {
        let t = triplets[i];
        let root = uf.find(t.head);
        counts[root] += 1;
        first[root] = first[root].min(t.head.min(t.tail));
    }
    let best = (0..n)
        .filter(|&r| counts[r] > 0)
        .max_by(|&a, &b| {
            let (sa, sb) = (uf.set_size(a), uf.set_size(b));
            sa.cmp(&sb).then(first[b].cmp(&first[a]))
        })
        .expect("non-empty");
    edges.iter().copied().filter(|&i| uf.find(triplets[i].head) == best).collect()
}

fn entities_of(triplets: &[Triplet], edges: &[usize]) -> BTreeSet<usize> {
    edges.iter().flat_map(|&i| [triplets[i].head, triplets[i].tail]).collect()
}

/// Seeds plus up to two hops of neighbors, at most `cap` new neighbors per
/// entity per hop, sampled uniformly without replacement.
fn two_hop_ball<R: Rng + ?Sized>(
    adj: &[Vec<usize>],
    pool: &[usize],
    seeds: usize,
    cap: usize,
    rng: &mut R,
) -> Result<BTreeSet<usize>> {
    if pool.len() < seeds {
        return Err(Error::Generation(format!(
            "cannot sample {seeds} seed entities from {} candidates",
            pool.len()
        )));
    }
    let mut chosen: Vec<usize> = index::sample(rng, pool.len(), seeds).iter().map(|k| pool[k]).collect();
    chosen.sort_unstable();
    let mut selected: BTreeSet<usize> = chosen.iter().copied().collect();
    let mut frontier = chosen;
    for _ in 0..2 {
        let mut next = Vec::new();
        for &e in &frontier {
            let eligible: Vec<usize> = adj[e].iter().copied().filter(|v| !selected.contains(v)).collect();
            let picked: Vec<usize> = if eligible.len() > cap {
                index::sample(rng, eligible.len(), cap).iter().map(|k| eligible[k]).collect()
            } else {
                eligible
            };
            for v in picked {
                if selected.insert(v) {
                    next.push(v);
                }
            }
        }
        frontier = next;
    }
    Ok(selected)
}

fn downsample<R: Rng + ?Sized>(items: &mut Vec<usize>, keep: usize, rng: &mut R) {
    if keep < items.len() {
        items.shuffle(rng);
        items.truncate(keep);
        items.sort_unstable();
    }
}

/// Runs the generation procedure on an un-augmented raw graph.
pub fn generate(raw: &KnowledgeGraph, cfg: &GenConfig) -> Result<Generated> {
    cfg.validate()?;
    if raw.is_augmented() {
        return Err(Error::AlreadyAugmented);
    }
    let n = raw.num_entities();
    let triplets = raw.base_triplets();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let all: Vec<usize> = (0..triplets.len()).collect();
    let giant = giant_component(n, triplets, &all);
    if giant.is_empty() {
        return Err(Error::EmptyGraph("raw graph".into()));
    }
    let giant_entities: Vec<usize> = entities_of(triplets, &giant).into_iter().collect();

    let mut relations: Vec<usize> = giant.iter().map(|&i| triplets[i].rel).collect::<BTreeSet<_>>().into_iter().collect();
    relations.shuffle(&mut rng);
    let n_inf_rel = (cfg.p_rel * relations.len() as f64).round() as usize;
    let reserved: HashSet<usize> = relations[..n_inf_rel].iter().copied().collect();

    // training side
    let adj = undirected_adjacency(n, triplets, &giant);
    let v_tr = two_hop_ball(&adj, &giant_entities, cfg.n_tr, cfg.hop_cap, &mut rng)?;
    let induced: Vec<usize> = giant
        .iter()
        .copied()
        .filter(|&i| {
            let t = triplets[i];
            !reserved.contains(&t.rel) && v_tr.contains(&t.head) && v_tr.contains(&t.tail)
        })
        .collect();
    let train = giant_component(n, triplets, &induced);
    if train.is_empty() {
        return Err(Error::Generation("training graph is empty".into()));
    }
    let v_tr = entities_of(triplets, &train);
    let r_tr: HashSet<usize> = train.iter().map(|&i| triplets[i].rel).collect();

    // inference side, on the giant component without training entities
    let remaining: Vec<usize> = giant
        .iter()
        .copied()
        .filter(|&i| !v_tr.contains(&triplets[i].head) && !v_tr.contains(&triplets[i].tail))
        .collect();
    let pool: Vec<usize> = giant_entities.iter().copied().filter(|e| !v_tr.contains(e)).collect();
    let adj = undirected_adjacency(n, triplets, &remaining);
    let v_inf = two_hop_ball(&adj, &pool, cfg.n_inf, cfg.hop_cap, &mut rng)?;
    let inside = |t: &Triplet| v_inf.contains(&t.head) && v_inf.contains(&t.tail);
    let mut known: Vec<usize> = remaining
        .iter()
        .copied()
        .filter(|&i| inside(&triplets[i]) && r_tr.contains(&triplets[i].rel))
        .collect();
    let mut new: Vec<usize> = remaining
        .iter()
        .copied()
        .filter(|&i| inside(&triplets[i]) && reserved.contains(&triplets[i].rel))
        .collect();
    if cfg.p_tri > 0.0 && new.is_empty() {
        return Err(Error::Generation("no inference triplet uses a reserved relation".into()));
    }
    let p = cfg.p_tri;
    if p >= 1.0 {
        known.clear();
    } else if p <= 0.0 {
        new.clear();
    } else if (new.len() as f64) * (1.0 - p) > (known.len() as f64) * p {
        let keep = ((known.len() as f64) * p / (1.0 - p)).round() as usize;
        downsample(&mut new, keep, &mut rng);
    } else {
        let keep = ((new.len() as f64) * (1.0 - p) / p).round() as usize;
        downsample(&mut known, keep, &mut rng);
    }
    let mut mixed = known;
    mixed.extend(new);
    mixed.sort_unstable();
    let inference = giant_component(n, triplets, &mixed);
    if inference.is_empty() {
        return Err(Error::Generation("inference graph is empty".into()));
    }
    let is_new = |i: &usize| reserved.contains(&triplets[*i].rel);
    let achieved = inference.iter().filter(|i| is_new(i)).count() as f64 / inference.len() as f64;
    if (achieved - p).abs() > 0.1 {
        warn!("achieved new-relation triplet share {achieved:.3} differs from target {p:.3}");
    }

    let (msg, valid, test) = split_inference(raw, &inference, &mut rng)?;
    let v_inf = entities_of(triplets, &inference);
    let r_inf: BTreeSet<usize> = inference.iter().map(|&i| triplets[i].rel).collect();
    let test_new = test.iter().filter(|&&i| !r_tr.contains(&triplets[i].rel)).count();
    let stats = GenStats {
        train_entities: v_tr.len(),
        train_relations: r_tr.len(),
        train_triplets: train.len(),
        inf_entities: v_inf.len(),
        inf_relations: r_inf.len(),
        inf_triplets: inference.len(),
        msg: msg.len(),
        valid: valid.len(),
        test: test.len(),
        achieved_p_tri: achieved,
        test_new_fraction: if test.is_empty() { 0.0 } else { test_new as f64 / test.len() as f64 },
    };
    info!(
        "generated: train {}/{}/{}, inference {}/{}/{} (msg {}, valid {}, test {})",
        stats.train_entities,
        stats.train_relations,
        stats.train_triplets,
        stats.inf_entities,
        stats.inf_relations,
        stats.inf_triplets,
        stats.msg,
        stats.valid,
        stats.test
    );
    Ok(Generated {
        train,
        msg,
        valid,
        test,
        stats,
    })
}

/// 3:1:1 split of the inference triplets. Messages always contain a spanning
/// tree and every relation; validation and test shrink if that forces it.
fn split_inference<R: Rng + ?Sized>(
    raw: &KnowledgeGraph,
    inference: &[usize],
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let local = raw.subgraph(inference);
    // compact to the entities and relations present, so the spanning tree
    // covers exactly the inference graph
    let mut ent_map = vec![usize::MAX; raw.num_entities()];
    let mut rel_map = vec![usize::MAX; raw.num_base_relations()];
    let (mut ne, mut nr) = (0, 0);
    let compact: Vec<Triplet> = local
        .base_triplets()
        .iter()
        .map(|t| {
            for e in [t.head, t.tail] {
                if ent_map[e] == usize::MAX {
                    ent_map[e] = ne;
                    ne += 1;
                }
            }
            if rel_map[t.rel] == usize::MAX {
                rel_map[t.rel] = nr;
                nr += 1;
            }
            Triplet::new(ent_map[t.head], rel_map[t.rel], ent_map[t.tail])
        })
        .collect();
    let ents = std::sync::Arc::new((0..ne).map(|i| i.to_string()).collect());
    let rels = std::sync::Arc::new((0..nr).map(|i| i.to_string()).collect());
    let g = KnowledgeGraph::from_parts(ents, rels, compact);
    let forced = forced_facts(&g, rng)?;
    let total = inference.len();
    let per_split = ((total as f64) / 5.0).round() as usize;
    let mut free: Vec<usize> = (0..total).filter(|&i| !forced[i]).collect();
    free.shuffle(rng);
    let n_test = per_split.min(free.len() / 2);
    let n_valid = per_split.min(free.len() - n_test);
    if n_valid < per_split || n_test < per_split {
        warn!("message constraints shrink valid/test to {n_valid}/{n_test} (wanted {per_split} each)");
    }
    let mut valid: Vec<usize> = free[..n_valid].iter().map(|&k| inference[k]).collect();
    let mut test: Vec<usize> = free[n_valid..n_valid + n_test].iter().map(|&k| inference[k]).collect();
    let held: HashSet<usize> = free[..n_valid + n_test].iter().copied().collect();
    let msg: Vec<usize> = (0..total).filter(|k| !held.contains(k)).map(|k| inference[k]).collect();
    valid.sort_unstable();
    test.sort_unstable();
    Ok((msg, valid, test))
}

fn labeled(raw: &KnowledgeGraph, idx: &[usize]) -> Vec<LabeledTriplet> {
    idx.iter()
        .map(|&i| {
            let t = raw.base_triplets()[i];
            [
                raw.entity_label(t.head).to_owned(),
                raw.relation_label(t.rel),
                raw.entity_label(t.tail).to_owned(),
            ]
        })
        .collect()
}

fn write_lines(path: &Path, lines: &[LabeledTriplet]) -> Result<()> {
    let mut body = String::new();
    for [h, r, t] in lines {
        let _ = writeln!(body, "{h}\t{r}\t{t}");
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn meta_text(cfg: &GenConfig, stats: &GenStats) -> String {
    let rows: [(&str, String); 17] = [
        ("n_tr", cfg.n_tr.to_string()),
        ("n_inf", cfg.n_inf.to_string()),
        ("p_rel", cfg.p_rel.to_string()),
        ("p_tri", cfg.p_tri.to_string()),
        ("hop_cap", cfg.hop_cap.to_string()),
        ("seed", cfg.seed.to_string()),
        ("train_entities", stats.train_entities.to_string()),
        ("train_relations", stats.train_relations.to_string()),
        ("train_triplets", stats.train_triplets.to_string()),
        ("inf_entities", stats.inf_entities.to_string()),
        ("inf_relations", stats.inf_relations.to_string()),
        ("inf_triplets", stats.inf_triplets.to_string()),
        ("msg_triplets", stats.msg.to_string()),
        ("valid_triplets", stats.valid.to_string()),
        ("test_triplets", stats.test.to_string()),
        ("achieved_p_tri", format!("{:.6}", stats.achieved_p_tri)),
        ("test_new_relation_fraction", format!("{:.6}", stats.test_new_fraction)),
    ];
    rows.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Writes `train.txt`, `msg.txt`, `valid.txt`, `test.txt` and `meta.txt`.
/// Reverse triplets are never written.
pub fn write_dataset(raw: &KnowledgeGraph, generated: &Generated, cfg: &GenConfig, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_lines(&dir.join(TRAIN_FILE), &labeled(raw, &generated.train))?;
    write_lines(&dir.join(MSG_FILE), &labeled(raw, &generated.msg))?;
    write_lines(&dir.join(VALID_FILE), &labeled(raw, &generated.valid))?;
    write_lines(&dir.join(TEST_FILE), &labeled(raw, &generated.test))?;
    let meta = dir.join(META_FILE);
    std::fs::write(&meta, meta_text(cfg, &generated.stats)).map_err(|e| Error::io(&meta, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> KnowledgeGraph {
        let lines = synthetic::corpus(&synthetic::SyntheticConfig {
            entities: 600,
            communities: 6,
            ..synthetic::SyntheticConfig::default()
        });
        KnowledgeGraph::from_labeled(&lines)
    }

    fn cfg(p_tri: f64) -> GenConfig {
        GenConfig {
            n_tr: 3,
            n_inf: 3,
            p_rel: 0.4,
            p_tri,
            hop_cap: 50,
            seed: 11,
        }
    }

    #[test]
    fn disjoint_connected_and_split() {
        let raw = corpus();
        let g = generate(&raw, &cfg(1.0)).unwrap();
        let t = raw.base_triplets();
        let v_tr = entities_of(t, &g.train);
        let v_inf: BTreeSet<usize> = g.msg.iter().chain(&g.valid).chain(&g.test).flat_map(|&i| [t[i].head, t[i].tail]).collect();
        assert!(v_tr.is_disjoint(&v_inf));
        assert_eq!(raw.subgraph(&g.train).component_count(), 1);
        let mut all = g.msg.clone();
        all.extend(&g.valid);
        all.extend(&g.test);
        assert_eq!(raw.subgraph(&all).component_count(), 1);
        assert_eq!(raw.subgraph(&g.msg).component_count(), 1);
        let total = all.len() as f64;
        assert!((g.valid.len() as f64 - total / 5.0).abs() <= 1.0);
        assert!((g.test.len() as f64 - total / 5.0).abs() <= 1.0);
        assert_eq!(g.stats.test_new_fraction, 1.0);
    }

    #[test]
    fn zero_new_share_uses_only_training_relations() {
        let raw = corpus();
        let g = generate(&raw, &cfg(0.0)).unwrap();
        let t = raw.base_triplets();
        let r_tr: HashSet<usize> = g.train.iter().map(|&i| t[i].rel).collect();
        assert!(g.msg.iter().chain(&g.test).all(|&i| r_tr.contains(&t[i].rel)));
    }

    #[test]
    fn deterministic_under_seed() {
        let raw = corpus();
        let a = generate(&raw, &cfg(0.5)).unwrap();
        let b = generate(&raw, &cfg(0.5)).unwrap();
        assert_eq!((a.train, a.msg, a.valid, a.test), (b.train, b.msg, b.valid, b.test));
    }

    #[test]
    fn too_many_seeds_is_an_error() {
        let raw = corpus();
        let c = GenConfig {
            n_tr: 10_000,
            ..cfg(1.0)
        };
        assert!(matches!(generate(&raw, &c), Err(Error::Generation(_))));
    }
}
