use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_ingram");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn ingram")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        let raw = ws.path("raw.txt");
        ok(&["synth", "--out", s(&raw), "--entities", "400", "--communities", "40", "--seed", "3"]);
        let data = ws.path("data");
        ok(&[
            "gen-data", "--raw", s(&raw), "--n-tr", "3", "--n-inf", "3", "--p-rel", "0.5", "--p-tri", "0.5", "--seed",
            "1", "--out", s(&data),
        ]);
        fs::write(
            ws.path("cfg.txt"),
            "epochs = 6\nvalidate_every = 3\nd_hat_prime = 16\nK = 2\nK_hat = 2\nB = 4\n",
        )
        .unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str) -> PathBuf {
        let model = self.path(out);
        ok(&[
            "train",
            "--data",
            s(&self.path("data")),
            "--config",
            s(&self.path("cfg.txt")),
            "--out",
            s(&model),
        ]);
        model
    }
}

#[test]
fn gen_data_writes_dataset_files() {
    let ws = Workspace::new();
    for f in ["train.txt", "msg.txt", "valid.txt", "test.txt", "meta.txt"] {
        assert!(ws.path("data").join(f).is_file(), "{f} missing");
    }
}

#[test]
fn train_eval_embed_relgraph() {
    let ws = Workspace::new();
    let model = ws.train("model.ing");
    let log = fs::read_to_string(ws.path("model.ing.log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 7);

    let data = ws.path("data");
    let ranks = ws.path("ranks.tsv");
    let out = ok(&["eval", "--data", s(&data), "--model", s(&model), "--ranks", s(&ranks)]);
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.lines().any(|l| l.starts_with("MRR\tall\t")), "{report}");
    let test_lines = fs::read_to_string(data.join("test.txt")).unwrap().lines().count();
    // head and tail queries per target
    assert_eq!(fs::read_to_string(&ranks).unwrap().lines().count(), 2 * test_lines + 1);

    let emb = ws.path("emb");
    ok(&["embed", "--data", s(&data), "--model", s(&model), "--out", s(&emb)]);
    let rels = fs::read_to_string(emb.join("relations.tsv")).unwrap();
    let first = rels.lines().next().unwrap();
    assert_eq!(first.split('\t').count(), 33);

    let rg = ws.path("rg.tsv");
    let biases = ws.path("bias.tsv");
    ok(&[
        "relgraph", "--data", s(&data), "--model", s(&model), "--out", s(&rg), "--bin-biases", s(&biases),
    ]);
    assert!(fs::read_to_string(&rg).unwrap().lines().count() > 1);
    // 2 layers, 2 heads, 4 bins
    let biases = fs::read_to_string(&biases).unwrap();
    assert_eq!(biases.lines().next(), Some("layer\thead\tbin\tvalue"));
    assert_eq!(biases.lines().count(), 1 + 2 * 2 * 4);
}

#[test]
fn training_is_reproducible() {
    let ws = Workspace::new();
    let a = ws.train("a.ing");
    let b = ws.train("b.ing");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let data = ws.path("data");
    let ea = ok(&["eval", "--data", s(&data), "--model", s(&a)]).stdout;
    let eb = ok(&["eval", "--data", s(&data), "--model", s(&b)]).stdout;
    assert_eq!(ea, eb);
}

#[test]
fn missing_data_dir_reports_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = run(&["train", "--data", s(&missing), "--out", s(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nowhere"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["relgraph", "--out", "x"]).status.code(), Some(2));
}

#[test]
fn invalid_parameters_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.txt");
    let out = run(&["synth", "--out", s(&raw), "--intra-community", "1.5"]);
    assert_eq!(out.status.code(), Some(1));

    fs::write(&raw, "a\tr\tb\nb\tr\tc\n").unwrap();
    let out = run(&[
        "gen-data", "--raw", s(&raw), "--n-tr", "1", "--n-inf", "1", "--p-rel", "2.0", "--p-tri", "0.5", "--out",
        s(&dir.path().join("d")),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let out = run(&["train", "--data", s(dir.path()), "--config", s(&cfg), "--out", s(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let ws = Workspace::new();
    let model = ws.train("model.ing");
    let mut bytes = fs::read(&model).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    fs::write(&model, bytes).unwrap();
    let out = run(&["eval", "--data", s(&ws.path("data")), "--model", s(&model)]);
    assert_eq!(out.status.code(), Some(1));
}
