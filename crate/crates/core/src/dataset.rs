//! Dataset directory: `train.txt`, `msg.txt`, `valid.txt`, `test.txt`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{known_relations, FilterSet};
use crate::kg::{parse_triplets, read_labeled, KnowledgeGraph, Triplet};

pub const TRAIN_FILE: &str = "train.txt";
pub const MSG_FILE: &str = "msg.txt";
pub const VALID_FILE: &str = "valid.txt";
pub const TEST_FILE: &str = "test.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    Valid,
    Test,
}

impl std::str::FromStr for EvalSplit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" => Ok(Self::Valid),
            "test" => Ok(Self::Test),
            _ => Err(Error::Config(format!("unknown split `{s}` (expected valid or test)"))),
        }
    }
}

/// An inference graph together with its held-out targets.
#[derive(Clone, Debug)]
pub struct InferenceSet {
    /// Augmented message graph.
    pub graph: KnowledgeGraph,
    pub valid: Vec<Triplet>,
    pub test: Vec<Triplet>,
    /// Messages, validation and test triplets, both directions.
    pub filter: FilterSet,
    /// Per base relation: label also occurs in training.
    pub known: Vec<bool>,
}

impl InferenceSet {
    /// `msg` is the un-augmented message graph; targets use its ids.
    pub fn new(msg: KnowledgeGraph, valid: Vec<Triplet>, test: Vec<Triplet>, train: Option<&KnowledgeGraph>) -> Result<Self> {
        let m = msg.num_base_relations();
        let filter = FilterSet::new(m, msg.base_triplets().iter().chain(&valid).chain(&test));
        let graph = msg.augment_reverse()?;
        let known = match train {
            Some(tr) => known_relations(&graph, tr.relations()),
            None => vec![false; m],
        };
        Ok(Self {
            graph,
            valid,
            test,
            filter,
            known,
        })
    }

    pub fn targets(&self, split: EvalSplit) -> &[Triplet] {
        match split {
            EvalSplit::Valid => &self.valid,
            EvalSplit::Test => &self.test,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    /// Un-augmented training graph.
    pub train: KnowledgeGraph,
    pub inference: InferenceSet,
}

fn encode_all(g: &KnowledgeGraph, path: &Path) -> Result<Vec<Triplet>> {
    read_labeled(path)?.iter().map(|t| g.encode(t)).collect()
}

impl Dataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            ));
        }
        let train = parse_triplets(dir.join(TRAIN_FILE))?;
        let inference = Self::load_inference(dir, Some(&train))?;
        Ok(Self { train, inference })
    }

    /// Loads only the inference side. Valid/test labels must occur in `msg.txt`.
    pub fn load_inference(dir: impl AsRef<Path>, train: Option<&KnowledgeGraph>) -> Result<InferenceSet> {
        let dir = dir.as_ref();
        let msg = parse_triplets(dir.join(MSG_FILE))?;
        let valid = encode_all(&msg, &dir.join(VALID_FILE))?;
        let test = encode_all(&msg, &dir.join(TEST_FILE))?;
        InferenceSet::new(msg, valid, test, train)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        std::fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn loads_directory() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), TRAIN_FILE, "a\tr\tb\nb\tr\tc\n");
        write(dir.path(), MSG_FILE, "x\tr\ty\ny\tq\tz\n");
        write(dir.path(), VALID_FILE, "x\tq\tz\n");
        write(dir.path(), TEST_FILE, "z\tr\tx\n");
        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.train.num_triplets(), 2);
        let inf = &ds.inference;
        assert!(inf.graph.is_augmented());
        assert_eq!(inf.known, vec![true, false]);
        let t = inf.test[0];
        assert!(inf.filter.contains(t.head, t.rel, t.tail));
        assert!(inf.filter.contains(t.tail, t.rel + 2, t.head));
    }

    #[test]
    fn unknown_label_in_targets_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), TRAIN_FILE, "a\tr\tb\n");
        write(dir.path(), MSG_FILE, "x\tr\ty\n");
        write(dir.path(), VALID_FILE, "x\tr\tw\n");
        write(dir.path(), TEST_FILE, "x\tr\ty\n");
        assert!(matches!(Dataset::load(dir.path()), Err(Error::UnknownLabel { .. })));
    }

    #[test]
    fn missing_directory_names_path() {
        let err = Dataset::load("/nonexistent/dataset").unwrap_err().to_string();
        assert!(err.contains("/nonexistent/dataset"), "{err}");
    }
}
