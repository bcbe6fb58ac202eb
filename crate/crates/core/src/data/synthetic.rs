//! Planted-alignment corpora for desk-scale verification.
//!
//! Each concept has a unit-norm prototype in image-feature space and a pair of
//! pseudo-words (`c{k}_head`, `c{k}_dep`) linked by a fixed relation type. An
//! item samples concepts for its image fragments (prototype plus Gaussian
//! noise) and one sentence whose triplets name a subset of those fragments.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::records::{CorpusDims, RawCorpus, RawRecord, RawSentence};
use crate::error::{Error, Result};
use crate::words::WordTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_items: usize,
    pub num_concepts: usize,
    pub fragments_per_image: usize,
    pub triplets_per_sentence: usize,
    pub noise_sigma: f64,
    pub image_dim: usize,
    pub word_dim: usize,
    pub num_relations: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_items: 250,
            num_concepts: 8,
            fragments_per_image: 5,
            triplets_per_sentence: 3,
            noise_sigma: 0.1,
            image_dim: 16,
            word_dim: 32,
            num_relations: 3,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_items", self.num_items),
            ("num_concepts", self.num_concepts),
            ("fragments_per_image", self.fragments_per_image),
            ("triplets_per_sentence", self.triplets_per_sentence),
            ("image_dim", self.image_dim),
            ("word_dim", self.word_dim),
            ("num_relations", self.num_relations),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.triplets_per_sentence > self.num_concepts {
            return Err(Error::Config(format!(
                "triplets_per_sentence ({}) exceeds num_concepts ({})",
                self.triplets_per_sentence, self.num_concepts
            )));
        }
        if self.triplets_per_sentence > self.fragments_per_image {
            return Err(Error::Config(format!(
                "triplets_per_sentence ({}) exceeds fragments_per_image ({})",
                self.triplets_per_sentence, self.fragments_per_image
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Which image fragment a triplet was generated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub item: usize,
    pub triplet_index: usize,
    pub fragment_index: usize,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: RawCorpus,
    pub table: WordTable,
    pub alignment: Vec<AlignmentRow>,
    /// Concept id of every image fragment, per item.
    pub fragment_concepts: Vec<Vec<usize>>,
    /// Concept id of every triplet, per item.
    pub triplet_concepts: Vec<Vec<usize>>,
}

pub fn concept_words(concept: usize) -> (String, String) {
    (format!("c{concept}_head"), format!("c{concept}_dep"))
}

pub fn concept_relation(concept: usize, num_relations: usize) -> String {
    format!("rel{}", concept % num_relations)
}

/// Deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let prototypes: Vec<Vec<f64>> = (0..spec.num_concepts)
        .map(|_| {
            let v: Vec<f64> = (0..spec.image_dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let words: Vec<String> = (0..spec.num_concepts)
        .flat_map(|c| {
            let (head, dep) = concept_words(c);
            [head, dep]
        })
        .collect();
    let table = WordTable::random_unit(spec.word_dim, &words, &mut rng)?;
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;

    let mut records = Vec::with_capacity(spec.num_items);
    let mut alignment = Vec::new();
    let mut fragment_concepts = Vec::with_capacity(spec.num_items);
    let mut triplet_concepts = Vec::with_capacity(spec.num_items);
    for item in 0..spec.num_items {
        let concepts: Vec<usize> = if spec.fragments_per_image <= spec.num_concepts {
            sample(&mut rng, spec.num_concepts, spec.fragments_per_image).into_vec()
        } else {
            (0..spec.fragments_per_image)
                .map(|_| rng.random_range(0..spec.num_concepts))
                .collect()
        };
        let image_fragments: Vec<Vec<f64>> = concepts
            .iter()
            .map(|&c| prototypes[c].iter().map(|&p| p + noise.sample(&mut rng)).collect())
            .collect();

        let named = sample(&mut rng, spec.fragments_per_image, spec.triplets_per_sentence).into_vec();
        let mut sentence = RawSentence {
            tokens: Vec::new(),
            triplets: Vec::new(),
        };
        let mut named_concepts = Vec::with_capacity(named.len());
        for (t, &frag) in named.iter().enumerate() {
            let c = concepts[frag];
            let (head, dep) = concept_words(c);
            sentence.tokens.push(dep.clone());
            sentence.tokens.push(head.clone());
            sentence
                .triplets
                .push([concept_relation(c, spec.num_relations), head, dep]);
            alignment.push(AlignmentRow {
                item,
                triplet_index: t,
                fragment_index: frag,
            });
            named_concepts.push(c);
        }
        records.push(RawRecord {
            image_id: format!("syn{item:05}"),
            image_fragments,
            sentences: vec![sentence],
        });
        fragment_concepts.push(concepts);
        triplet_concepts.push(named_concepts);
    }

    Ok(SyntheticCorpus {
        corpus: RawCorpus {
            dims: CorpusDims {
                image_dim: spec.image_dim,
            },
            records,
        },
        table,
        alignment,
        fragment_concepts,
        triplet_concepts,
    })
}

/// `item,triplet_index,fragment_index` with a header row.
pub fn alignment_csv(rows: &[AlignmentRow]) -> String {
    let mut out = String::from("item,triplet_index,fragment_index\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.item, r.triplet_index, r.fragment_index).unwrap();
    }
    out
}
