//! Fully resolved run configuration, saved next to every output.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FragmentMode;
use crate::error::{Error, Result};
use crate::objective::ObjectiveConfig;
use crate::optim::TrainConfig;

/// Item counts per split. Items are shuffled with `seed` and carved off in
/// test, validation, train order; `train: None` takes everything left.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Option<usize>,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn split(&self, num_items: usize) -> Result<SplitIndices> {
        let train = self.train.unwrap_or(num_items.saturating_sub(self.val + self.test));
        if train + self.val + self.test > num_items {
            return Err(Error::Config(format!(
                "split {train}/{}/{} needs more than the {num_items} available items",
                self.val, self.test
            )));
        }
        if train == 0 {
            return Err(Error::Config("training split is empty".into()));
        }
        let mut order: Vec<usize> = (0..num_items).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        let (test, rest) = order.split_at(self.test);
        let (val, rest) = rest.split_at(self.val);
        Ok(SplitIndices {
            train: rest[..train].to_vec(),
            val: val.to_vec(),
            test: test.to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub words: PathBuf,
    pub out_dir: PathBuf,
    pub fragments: FragmentMode,
    /// Shared embedding width `h`. Forced to the word width in DeViSE mode.
    pub embed_dim: usize,
    /// Relation types rarer than this share of training triplets are pruned.
    pub min_relation_frac: f64,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub objective: ObjectiveConfig,
    pub eval_ks: Vec<usize>,
}

impl RunConfig {
    pub fn new(corpus: impl Into<PathBuf>, words: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            corpus: corpus.into(),
            words: words.into(),
            out_dir: out_dir.into(),
            fragments: FragmentMode::Triplets,
            embed_dim: 64,
            min_relation_frac: 0.01,
            split: SplitSpec::default(),
            train: TrainConfig::default(),
            objective: ObjectiveConfig::default(),
            eval_ks: vec![1, 5, 10],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.objective.validate()?;
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err(Error::Config(
                "eval Ks must be a non-empty list of positive integers".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.min_relation_frac) {
            return Err(Error::Config("min_relation_frac must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}
