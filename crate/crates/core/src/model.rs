//! Parameters, fragment types and the two fragment encoders.
//!
//! A sentence fragment is a typed dependency triplet `(R, w1, w2)` embedded as
//! `relu(W_R [e1; e2] + b_R)` with `e1`, `e2` taken from the fixed word table.
//! An image fragment is a precomputed feature vector projected linearly by
//! `W_m` (no bias, no nonlinearity).

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::BagStructure;
use crate::words::WordTable;

/// Ordered relation types with dense indices `0..R`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct RelationVocab {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl RelationVocab {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = RelationVocab::default();
        for name in names {
            let name = name.into();
            if vocab.index.contains_key(&name) {
                return Err(Error::Input(format!("duplicate relation `{name}`")));
            }
            vocab.index.insert(name.clone(), vocab.names.len());
            vocab.names.push(name);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl TryFrom<Vec<String>> for RelationVocab {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        RelationVocab::new(names)
    }
}

impl From<RelationVocab> for Vec<String> {
    fn from(v: RelationVocab) -> Self {
        v.names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Word-vector width `d`.
    pub word_dim: usize,
    /// Shared embedding width `h`.
    pub embed_dim: usize,
    /// Image feature width.
    pub image_dim: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.embed_dim == 0 || self.image_dim == 0 {
            return Err(Error::Config(format!("all dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationWeights {
    /// `h × 2d`
    pub weight: Array2<f64>,
    /// `h`
    pub bias: Array1<f64>,
}

/// All trainable parameters. The word table is deliberately not part of it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    pub relations: Vec<RelationWeights>,
    /// `h × D_img`
    pub image_proj: Array2<f64>,
}

impl ModelParams {
    pub fn zeros(dims: Dims, num_relations: usize) -> Self {
        let h = dims.embed_dim;
        ModelParams {
            dims,
            relations: (0..num_relations)
                .map(|_| RelationWeights {
                    weight: Array2::zeros((h, 2 * dims.word_dim)),
                    bias: Array1::zeros(h),
                })
                .collect(),
            image_proj: Array2::zeros((h, dims.image_dim)),
        }
    }

    /// Uniform(-s, s) weights with `s = sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init<R: Rng + ?Sized>(dims: Dims, num_relations: usize, rng: &mut R) -> Self {
        let mut params = ModelParams::zeros(dims, num_relations);
        let fill = |m: &mut Array2<f64>, rng: &mut R| {
            let (rows, cols) = m.dim();
            let scale = (6.0 / (rows + cols) as f64).sqrt();
            m.mapv_inplace(|_| rng.random_range(-scale..scale));
        };
        for rel in &mut params.relations {
            fill(&mut rel.weight, rng);
        }
        fill(&mut params.image_proj, rng);
        params
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(self.dims, self.relations.len())
    }

    /// Named views of every trainable tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(2 * self.relations.len() + 1);
        for (r, rel) in self.relations.iter().enumerate() {
            out.push((format!("relation[{r}].weight"), rel.weight.as_slice().unwrap()));
            out.push((format!("relation[{r}].bias"), rel.bias.as_slice().unwrap()));
        }
        out.push(("image_proj".to_owned(), self.image_proj.as_slice().unwrap()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::with_capacity(2 * self.relations.len() + 1);
        for (r, rel) in self.relations.iter_mut().enumerate() {
            out.push((format!("relation[{r}].weight"), rel.weight.as_slice_mut().unwrap()));
            out.push((format!("relation[{r}].bias"), rel.bias.as_slice_mut().unwrap()));
        }
        out.push(("image_proj".to_owned(), self.image_proj.as_slice_mut().unwrap()));
        out
    }

    /// Squared L2 norm of the weight matrices (biases excluded).
    pub fn weight_sq_norm(&self) -> f64 {
        let sq = |m: &Array2<f64>| m.iter().map(|x| x * x).sum::<f64>();
        self.relations.iter().map(|r| sq(&r.weight)).sum::<f64>() + sq(&self.image_proj)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn num_entries(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SentenceFragment {
    /// Typed dependency triplet (or a BOW/bigram pseudo-triplet).
    Triplet {
        relation: usize,
        word1: String,
        word2: String,
    },
    /// Precomputed embedding that bypasses the relation encoder (DeViSE-style
    /// averaged word vectors). Its width must equal the embedding width.
    Direct(Vec<f64>),
}

impl SentenceFragment {
    pub fn triplet(relation: usize, word1: impl Into<String>, word2: impl Into<String>) -> Self {
        SentenceFragment::Triplet {
            relation,
            word1: word1.into(),
            word2: word2.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFragment {
    pub features: Vec<f64>,
}

impl ImageFragment {
    pub fn new(features: Vec<f64>) -> Self {
        ImageFragment { features }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub image_id: String,
    pub image_fragments: Vec<ImageFragment>,
    pub sentences: Vec<Vec<SentenceFragment>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub image_dim: usize,
    pub relations: RelationVocab,
    pub items: Vec<CorpusItem>,
}

impl Corpus {
    pub fn new(image_dim: usize, relations: RelationVocab, items: Vec<CorpusItem>) -> Result<Self> {
        for item in &items {
            if item.image_fragments.is_empty() {
                return Err(Error::Structure(format!(
                    "item `{}` has no image fragments",
                    item.image_id
                )));
            }
            if let Some(f) = item.image_fragments.iter().find(|f| f.features.len() != image_dim) {
                return Err(Error::Shape {
                    context: "image fragment",
                    expected: image_dim,
                    actual: f.features.len(),
                });
            }
            if item.sentences.iter().any(Vec::is_empty) {
                return Err(Error::Structure(format!(
                    "item `{}` has an empty sentence",
                    item.image_id
                )));
            }
        }
        Ok(Corpus {
            image_dim,
            relations,
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_sentences(&self) -> usize {
        self.items.iter().map(|i| i.sentences.len()).sum()
    }

    /// Sub-corpus with the given items, in the given order.
    pub fn select(&self, indices: &[usize]) -> Corpus {
        Corpus {
            image_dim: self.image_dim,
            relations: self.relations.clone(),
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
        }
    }
}

/// One image paired with one of its sentences: a single slot of a mini-batch.
#[derive(Debug, Clone, Copy)]
pub struct Pair<'a> {
    pub image: &'a [ImageFragment],
    pub sentence: &'a [SentenceFragment],
}

impl<'a> Pair<'a> {
    pub fn new(item: &'a CorpusItem, sentence: usize) -> Self {
        Pair {
            image: &item.image_fragments,
            sentence: &item.sentences[sentence],
        }
    }
}

/// Per-row record of what the sentence encoder saw, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) enum SentenceTrace {
    Triplet {
        relation: usize,
        input: Array1<f64>,
        pre_activation: Array1<f64>,
    },
    Direct,
}

/// Encoded mini-batch: fragment embeddings plus bag bookkeeping.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    /// `n_v × h`, one row per image fragment.
    pub images: Array2<f64>,
    /// `n_s × h`, one row per sentence fragment.
    pub sentences: Array2<f64>,
    pub bags: BagStructure,
    pub(crate) image_inputs: Array2<f64>,
    pub(crate) sentence_traces: Vec<SentenceTrace>,
}

fn relation_weights(params: &ModelParams, relation: usize) -> Result<&RelationWeights> {
    params.relations.get(relation).ok_or(Error::UnknownRelation {
        index: relation,
        size: params.relations.len(),
    })
}

fn triplet_input(table: &WordTable, word_dim: usize, word1: &str, word2: &str) -> Result<Array1<f64>> {
    if table.dim() != word_dim {
        return Err(Error::Shape {
            context: "word table width",
            expected: word_dim,
            actual: table.dim(),
        });
    }
    let mut input = Array1::zeros(2 * word_dim);
    input.slice_mut(s![..word_dim]).assign(&table.get(word1)?);
    input.slice_mut(s![word_dim..]).assign(&table.get(word2)?);
    Ok(input)
}

fn encode_sentence_traced(
    params: &ModelParams,
    table: &WordTable,
    frag: &SentenceFragment,
) -> Result<(Array1<f64>, SentenceTrace)> {
    match frag {
        SentenceFragment::Triplet { relation, word1, word2 } => {
            let rel = relation_weights(params, *relation)?;
            let input = triplet_input(table, params.dims.word_dim, word1, word2)?;
            let pre_activation = rel.weight.dot(&input) + &rel.bias;
            // relu'(0) is taken as 0, matching the strict `> 0` used in backprop
            let out = pre_activation.mapv(|x| if x > 0.0 { x } else { 0.0 });
            Ok((
                out,
                SentenceTrace::Triplet {
                    relation: *relation,
                    input,
                    pre_activation,
                },
            ))
        }
        SentenceFragment::Direct(v) => {
            if v.len() != params.dims.embed_dim {
                return Err(Error::Shape {
                    context: "direct sentence fragment",
                    expected: params.dims.embed_dim,
                    actual: v.len(),
                });
            }
            Ok((Array1::from(v.clone()), SentenceTrace::Direct))
        }
    }
}

/// `relu(W_R [e1; e2] + b_R)`.
pub fn encode_sentence_fragment(
    params: &ModelParams,
    table: &WordTable,
    frag: &SentenceFragment,
) -> Result<Array1<f64>> {
    encode_sentence_traced(params, table, frag).map(|(out, _)| out)
}

/// `W_m · features`.
pub fn encode_image_fragment(params: &ModelParams, frag: &ImageFragment) -> Result<Array1<f64>> {
    if frag.features.len() != params.dims.image_dim {
        return Err(Error::Shape {
            context: "image fragment",
            expected: params.dims.image_dim,
            actual: frag.features.len(),
        });
    }
    Ok(params.image_proj.dot(&ArrayView1::from(&frag.features[..])))
}

/// Encodes every fragment of every pair, preserving input order, and records
/// which batch slot owns each row.
pub fn encode_batch(params: &ModelParams, table: &WordTable, pairs: &[Pair<'_>]) -> Result<EncodedBatch> {
    if pairs.is_empty() {
        return Err(Error::Structure("cannot encode an empty batch".into()));
    }
    let h = params.dims.embed_dim;
    let n_v: usize = pairs.iter().map(|p| p.image.len()).sum();
    let n_s: usize = pairs.iter().map(|p| p.sentence.len()).sum();

    let mut images = Array2::zeros((n_v, h));
    let mut image_inputs = Array2::zeros((n_v, params.dims.image_dim));
    let mut sentences = Array2::zeros((n_s, h));
    let mut sentence_traces = Vec::with_capacity(n_s);
    let mut image_owner = Vec::with_capacity(n_v);
    let mut sentence_owner = Vec::with_capacity(n_s);

    for (slot, pair) in pairs.iter().enumerate() {
        for frag in pair.image {
            let row = image_owner.len();
            images.row_mut(row).assign(&encode_image_fragment(params, frag)?);
            image_inputs.row_mut(row).assign(&ArrayView1::from(&frag.features[..]));
            image_owner.push(slot);
        }
        for frag in pair.sentence {
            let (out, trace) = encode_sentence_traced(params, table, frag)?;
            sentences.row_mut(sentence_owner.len()).assign(&out);
            sentence_traces.push(trace);
            sentence_owner.push(slot);
        }
    }

    Ok(EncodedBatch {
        images,
        sentences,
        bags: BagStructure::new(image_owner, sentence_owner, pairs.len())?,
        image_inputs,
        sentence_traces,
    })
}
