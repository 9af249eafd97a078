//! `ingram`: dataset generation, training, inference and evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ingram_core::datagen::synthetic::{corpus, SyntheticConfig};
use ingram_core::datagen::write_dataset;
use ingram_core::dataset::MSG_FILE;
use ingram_core::inference::default_seed;
use ingram_core::{
    embed_graph, evaluate, fit, generate, load_checkpoint, parse_triplets, save_checkpoint, Checkpoint, Dataset,
    EmbeddingSet, EvalOptions, EvalSplit, GenConfig, KnowledgeGraph, ModelParameters, RelationGraph, TieMode,
    TrainConfig,
};

mod alloc;

#[derive(Parser)]
#[command(name = "ingram", version, about = "Inductive knowledge graph embedding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic raw corpus with planted relation compositions.
    Synth(SynthArgs),
    /// Build a train/inference dataset from a raw triplet file.
    GenData(GenDataArgs),
    /// Train on `train.txt`, selecting the best epoch on `valid.txt`.
    Train(TrainArgs),
    /// Embed the message graph with a checkpoint and rank a split.
    Eval(EvalArgs),
    /// Write relation and entity embeddings of the message graph as TSV.
    Embed(EmbedArgs),
    /// Export the relation graph, and optionally the learned bin biases.
    Relgraph(RelgraphArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    entities: Option<usize>,
    #[arg(long)]
    types: Option<usize>,
    #[arg(long)]
    communities: Option<usize>,
    #[arg(long)]
    base_relations: Option<usize>,
    #[arg(long)]
    compositions: Option<usize>,
    /// Maximum edges per head entity and base relation.
    #[arg(long)]
    max_out: Option<usize>,
    /// Probability that a base edge stays inside its community.
    #[arg(long)]
    intra_community: Option<f64>,
    /// Probability that a two-hop path yields a composition edge.
    #[arg(long)]
    composition_keep: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    raw: PathBuf,
    #[arg(long)]
    n_tr: usize,
    #[arg(long)]
    n_inf: usize,
    #[arg(long)]
    p_rel: f64,
    #[arg(long)]
    p_tri: f64,
    #[arg(long, default_value_t = 50)]
    hop_cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// `key = value` file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Training log; defaults to `<out>.log.tsv`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct InferenceArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Feature seed; defaults to the message graph fingerprint.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    inference: InferenceArgs,
    #[arg(long, default_value = "test")]
    split: EvalSplit,
    #[arg(long, default_value = "mid")]
    ties: TieMode,
    /// Rank against all candidates instead of the filtered set.
    #[arg(long)]
    unfiltered: bool,
    /// Per-query rank dump.
    #[arg(long)]
    ranks: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[command(flatten)]
    inference: InferenceArgs,
    /// Directory receiving `relations.tsv` and `entities.tsv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RelgraphArgs {
    /// Dataset directory; the message graph is used unless `--graph` is given.
    #[arg(long, required_unless_present = "graph")]
    data: Option<PathBuf>,
    /// Any triplet file.
    #[arg(long, conflicts_with = "data")]
    graph: Option<PathBuf>,
    /// Bin count; taken from `--model` when given.
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Learned bin biases per layer and head (requires `--model`).
    #[arg(long, requires = "model")]
    bin_biases: Option<PathBuf>,
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let d = SyntheticConfig::default();
    let cfg = SyntheticConfig {
        entities: a.entities.unwrap_or(d.entities),
        types: a.types.unwrap_or(d.types),
        communities: a.communities.unwrap_or(d.communities),
        base_relations: a.base_relations.unwrap_or(d.base_relations),
        compositions: a.compositions.unwrap_or(d.compositions),
        max_out: a.max_out.unwrap_or(d.max_out),
        intra_community: a.intra_community.unwrap_or(d.intra_community),
        composition_keep: a.composition_keep.unwrap_or(d.composition_keep),
        seed: a.seed,
    };
    cfg.validate()?;
    let lines = corpus(&cfg);
    let body: String = lines.iter().map(|[h, r, t]| format!("{h}\t{r}\t{t}\n")).collect();
    write(&a.out, body)?;
    log::info!("wrote {} triplets to {}", lines.len(), a.out.display());
    Ok(())
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let raw = parse_triplets(&a.raw)?;
    let cfg = GenConfig {
        n_tr: a.n_tr,
        n_inf: a.n_inf,
        p_rel: a.p_rel,
        p_tri: a.p_tri,
        hop_cap: a.hop_cap,
        seed: a.seed,
    };
    let generated = generate(&raw, &cfg)?;
    write_dataset(&raw, &generated, &cfg, &a.out)?;
    log::info!("{:?}", generated.stats);
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let ds = Dataset::load(&a.data)?;
    let outcome = fit(&ds.train, Some(&ds.inference), &cfg)?;
    save_checkpoint(
        &Checkpoint {
            params: outcome.best,
            seed: cfg.seed,
        },
        &a.out,
    )?;
    let log_path = a.log.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.tsv");
        p.into()
    });
    write(&log_path, outcome.log.to_tsv())?;
    if let (Some(epoch), Some(mrr)) = (outcome.best_epoch, outcome.best_mrr) {
        log::info!("best validation MRR {mrr:.6} at epoch {epoch}");
    }
    Ok(())
}

struct Loaded {
    params: ModelParameters,
    emb: EmbeddingSet,
}

fn load_and_embed(a: &InferenceArgs, graph: &KnowledgeGraph) -> Result<Loaded> {
    let params = load_checkpoint(&a.model)?.params;
    let seed = a.seed.unwrap_or_else(|| default_seed(graph));
    let emb = embed_graph(&params, graph, seed)?;
    Ok(Loaded { params, emb })
}

fn eval(a: EvalArgs) -> Result<()> {
    let ds = Dataset::load(&a.inference.data)?;
    let inf = &ds.inference;
    let loaded = load_and_embed(&a.inference, &inf.graph)?;
    let options = EvalOptions {
        ties: a.ties,
        unfiltered: a.unfiltered,
    };
    let report = evaluate(
        &loaded.emb,
        &loaded.params,
        &inf.graph,
        inf.targets(a.split),
        &inf.filter,
        &inf.known,
        options,
    )?;
    print!("{}", report.to_tsv());
    if let Some(path) = &a.ranks {
        write(path, report.ranks_tsv())?;
    }
    Ok(())
}

fn embedding_tsv(labels: impl Iterator<Item = String>, values: &ingram_core::Tensor) -> String {
    let mut out = String::new();
    for (i, label) in labels.enumerate() {
        out.push_str(&label);
        for v in values.row(i) {
            out.push('\t');
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    out
}

fn embed(a: EmbedArgs) -> Result<()> {
    let msg = parse_triplets(a.inference.data.join(MSG_FILE))?.augment_reverse()?;
    let loaded = load_and_embed(&a.inference, &msg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let rels = (0..msg.num_relations()).map(|k| msg.relation_label(k));
    write(&a.out.join("relations.tsv"), embedding_tsv(rels, &loaded.emb.relations))?;
    let ents = (0..msg.num_entities()).map(|i| msg.entity_label(i).to_string());
    write(&a.out.join("entities.tsv"), embedding_tsv(ents, &loaded.emb.entities))?;
    Ok(())
}

fn bin_bias_tsv(params: &ModelParameters) -> String {
    let mut out = String::from("layer\thead\tbin\tvalue\n");
    for (l, layer) in params.rel_layers.iter().enumerate() {
        for (h, head) in layer.heads.iter().enumerate() {
            for b in 0..head.bin_bias.rows() {
                out.push_str(&format!("{l}\t{h}\t{b}\t{:?}\n", head.bin_bias.get(b, 0)));
            }
        }
    }
    out
}

fn relgraph(a: RelgraphArgs) -> Result<()> {
    let path = match (&a.graph, &a.data) {
        (Some(g), _) => g.clone(),
        (None, Some(d)) => d.join(MSG_FILE),
        (None, None) => unreachable!("clap requires one of --data/--graph"),
    };
    let g = parse_triplets(&path)?.augment_reverse()?;
    let params = a.model.as_ref().map(load_checkpoint).transpose()?.map(|c| c.params);
    let bins = params.as_ref().map_or(a.bins, |p| p.config.bins);
    let rg = RelationGraph::build(&g, bins)?;
    write(&a.out, rg.to_tsv(&g))?;
    if let (Some(path), Some(params)) = (&a.bin_biases, &params) {
        write(path, bin_bias_tsv(params))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Embed(a) => embed(a),
        Command::Relgraph(a) => relgraph(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    alloc::keep_large_blocks();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
