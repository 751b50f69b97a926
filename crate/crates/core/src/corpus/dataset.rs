use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Token, Vocabulary};
use crate::error::{Error, Result};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const SPLITS_FILE: &str = "splits.json";

/// One captioned item: a fixed-length context vector standing in for image features, and its
/// references. References never contain BOS or EOS; EOS is appended at training time.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: u64,
    pub context: Vec<f64>,
    pub references: Vec<Vec<Token>>,
    /// Attribute indices for synthetic examples; empty for ingested data.
    pub attributes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Indices into `Dataset::examples`; disjoint and jointly covering.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    /// Shuffles `0..n` with `seed` and cuts it by the given fractions (test takes the rest).
    pub fn random(n: usize, val_frac: f64, test_frac: f64, seed: u64) -> Self {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut crate::seed::rng(seed, &[0x5917]));
        let n_val = ((n as f64) * val_frac).round() as usize;
        let n_test = ((n as f64) * test_frac).round() as usize;
        let n_train = n.saturating_sub(n_val + n_test);
        let mut train = idx[..n_train].to_vec();
        let mut val = idx[n_train..n_train + n_val.min(n - n_train)].to_vec();
        let mut test = idx[(n_train + n_val).min(n)..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        SplitSpec { train, val, test }
    }

    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || seen[i] {
                return Err(Error::Config(format!(
                    "split index {i} out of range or repeated"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config("splits do not cover the dataset".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub examples: Vec<Example>,
    pub splits: SplitSpec,
    pub max_len: usize,
}

#[derive(Serialize, Deserialize)]
struct ExampleLine {
    id: u64,
    context: Vec<f64>,
    references: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    attributes: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SplitsFile {
    max_len: usize,
    #[serde(flatten)]
    splits: SplitSpec,
}

impl Dataset {
    pub fn context_dim(&self) -> usize {
        self.examples.first().map_or(0, |e| e.context.len())
    }

    pub fn split(&self, split: Split) -> Vec<&Example> {
        self.splits
            .get(split)
            .iter()
            .map(|&i| &self.examples[i])
            .collect()
    }

    /// Writes `dataset.jsonl`, `vocab.txt` and `splits.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(DATASET_FILE);
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(f);
        for ex in &self.examples {
            let line = ExampleLine {
                id: ex.id,
                context: ex.context.clone(),
                references: ex.references.iter().map(|r| self.vocab.decode(r)).collect(),
                attributes: ex.attributes.clone(),
            };
            serde_json::to_writer(&mut w, &line).map_err(|e| Error::Internal(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        let sp = dir.join(SPLITS_FILE);
        let body = serde_json::to_string_pretty(&SplitsFile {
            max_len: self.max_len,
            splits: self.splits.clone(),
        })
        .map_err(|e| Error::Internal(e.to_string()))?;
        std::fs::write(&sp, body).map_err(|e| Error::io(&sp, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
        let path = dir.join(DATASET_FILE);
        let f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut examples = Vec::new();
        let mut offset = 0usize;
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            let len = line.len() + 1;
            if !line.trim().is_empty() {
                let parsed: ExampleLine =
                    serde_json::from_str(&line).map_err(|e| Error::Parse {
                        path: path.clone(),
                        offset: offset + e.column().saturating_sub(1),
                        message: e.to_string(),
                    })?;
                examples.push(Example {
                    id: parsed.id,
                    context: parsed.context,
                    references: parsed.references.iter().map(|r| vocab.encode(r)).collect(),
                    attributes: parsed.attributes,
                });
            }
            offset += len;
        }
        let sp = dir.join(SPLITS_FILE);
        let body = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let splits: SplitsFile = serde_json::from_str(&body).map_err(|e| Error::Parse {
            path: sp.clone(),
            offset: 0,
            message: e.to_string(),
        })?;
        splits.splits.validate(examples.len())?;
        if let Some(first) = examples.first() {
            let d = first.context.len();
            if let Some(bad) = examples.iter().find(|e| e.context.len() != d) {
                return Err(Error::Schema {
                    path,
                    field: format!("context (example {} has a different dimension)", bad.id),
                });
            }
        }
        Ok(Dataset {
            vocab,
            examples,
            splits: splits.splits,
            max_len: splits.max_len,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_split_is_partition() {
        let s = SplitSpec::random(103, 0.1, 0.1, 4);
        s.validate(103).unwrap();
        assert_eq!(s.val.len(), 10);
        assert_eq!(s.test.len(), 10);
        assert_eq!(s.train.len(), 83);
        assert_eq!(s, SplitSpec::random(103, 0.1, 0.1, 4));
    }

    #[test]
    fn validate_catches_overlap() {
        let s = SplitSpec {
            train: vec![0, 1],
            val: vec![1],
            test: vec![2],
        };
        assert!(s.validate(3).is_err());
    }
}
