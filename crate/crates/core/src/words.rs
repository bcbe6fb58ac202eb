//! Fixed word-vector lookup table.
//!
//! The table is loaded once (from a text file or generated for synthetic
//! corpora) and never modified afterwards; training only reads from it.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WordTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Array2<f64>,
}

impl WordTable {
    /// Builds a table from `(word, vector)` entries. Later duplicates are rejected.
    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        if dim == 0 {
            return Err(Error::Config("word dimension must be positive".into()));
        }
        let mut words = Vec::new();
        let mut index = HashMap::new();
        let mut flat = Vec::new();
        for (word, vector) in entries {
            let word = word.into();
            if vector.len() != dim {
                return Err(Error::Shape {
                    context: "word vector",
                    expected: dim,
                    actual: vector.len(),
                });
            }
            if vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::Input(format!("word `{word}` has a non-finite entry")));
            }
            if index.insert(word.clone(), words.len()).is_some() {
                return Err(Error::Input(format!("duplicate word `{word}`")));
            }
            words.push(word);
            flat.extend(vector);
        }
        let vectors = Array2::from_shape_vec((words.len(), dim), flat).expect("row count and width tracked above");
        Ok(WordTable {
            dim,
            words,
            index,
            vectors,
        })
    }

    /// Random unit-norm vectors for the given words, deterministic in `rng`.
    pub fn random_unit<R: Rng + ?Sized>(dim: usize, words: &[String], rng: &mut R) -> Result<Self> {
        let entries = words.iter().map(|w| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            (w.clone(), v.into_iter().map(|x| x / norm).collect())
        });
        WordTable::from_entries(dim, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn get(&self, word: &str) -> Result<ArrayView1<'_, f64>> {
        self.index
            .get(word)
            .map(|&i| self.vectors.row(i))
            .ok_or_else(|| Error::MissingWord(word.to_owned()))
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Parses the `word v1 v2 ... vd` text format. The width is taken from the
    /// first non-empty line.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut dim = None;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let word = parts.next().unwrap_or_default().to_owned();
            let vector = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    path: path.to_owned(),
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
            let width = *dim.get_or_insert(vector.len());
            if vector.len() != width || width == 0 {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: lineno + 1,
                    message: format!("expected {width} components, found {}", vector.len()),
                });
            }
            entries.push((word, vector));
        }
        let dim = dim.ok_or_else(|| Error::Input(format!("{} has no word vectors", path.display())))?;
        WordTable::from_entries(dim, entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        WordTable::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (word, row) in self.words.iter().zip(self.vectors.rows()) {
            out.push_str(word);
            for x in row {
                write!(out, " {x}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
