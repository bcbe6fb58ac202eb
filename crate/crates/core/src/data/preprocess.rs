//! Relation pruning, dictionary filtering and fragment construction.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::records::RawRecord;
use crate::error::{Error, Result};
use crate::model::{Corpus, CorpusItem, ImageFragment, RelationVocab, SentenceFragment};
use crate::words::WordTable;

pub const BOW_RELATION: &str = "__BOW__";
pub const BIGRAM_RELATION: &str = "__BIGRAM__";

/// Attrition counters for one preprocessing stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropCounts {
    pub triplets: usize,
    pub sentences: usize,
    pub records: usize,
}

impl DropCounts {
    fn log(&self, stage: &str) {
        if self.sentences > 0 || self.records > 0 {
            log::warn!(
                "{stage}: dropped {} triplets, {} sentences, {} records",
                self.triplets,
                self.sentences,
                self.records
            );
        } else if self.triplets > 0 {
            log::info!("{stage}: dropped {} triplets", self.triplets);
        }
    }
}

/// Keeps triplets satisfying `keep`, then drops empty sentences and records
/// left without sentences. Record order is preserved.
fn retain_triplets<F>(records: &[RawRecord], stage: &'static str, mut keep: F) -> Result<(Vec<RawRecord>, DropCounts)>
where
    F: FnMut(&[String; 3]) -> bool,
{
    let mut drops = DropCounts::default();
    let mut out = Vec::with_capacity(records.len());
    for record in records {
        let mut record = record.clone();
        for sentence in &mut record.sentences {
            let before = sentence.triplets.len();
            sentence.triplets.retain(&mut keep);
            drops.triplets += before - sentence.triplets.len();
        }
        let before = record.sentences.len();
        record.sentences.retain(|s| !s.triplets.is_empty());
        drops.sentences += before - record.sentences.len();
        if record.sentences.is_empty() {
            drops.records += 1;
            log::debug!("{stage}: record `{}` has no sentences left", record.image_id);
        } else {
            out.push(record);
        }
    }
    drops.log(stage);
    if out.is_empty() {
        return Err(Error::EmptyCorpus { stage });
    }
    Ok((out, drops))
}

#[derive(Debug, Clone)]
pub struct Pruned {
    pub vocab: RelationVocab,
    pub records: Vec<RawRecord>,
    pub drops: DropCounts,
}

/// Removes relation types whose share of all triplets is below `min_frac`.
/// Surviving types keep their order of first appearance.
pub fn prune_relations(records: &[RawRecord], min_frac: f64) -> Result<Pruned> {
    if !(0.0..1.0).contains(&min_frac) {
        return Err(Error::Config(format!("min_frac must lie in [0, 1), got {min_frac}")));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut total = 0usize;
    for t in records.iter().flat_map(|r| &r.sentences).flat_map(|s| &s.triplets) {
        let c = counts.entry(t[0].as_str()).or_insert_with(|| {
            order.push(t[0].as_str());
            0
        });
        *c += 1;
        total += 1;
    }
    let kept: Vec<String> = order
        .into_iter()
        .filter(|name| (counts[name] as f64) >= min_frac * total as f64)
        .map(str::to_owned)
        .collect();
    log::info!(
        "relation pruning: {} of {} relation types kept",
        kept.len(),
        counts.len()
    );
    let vocab = RelationVocab::new(kept)?;
    let (records, drops) = apply_relation_vocab(records, &vocab)?;
    Ok(Pruned { vocab, records, drops })
}

/// Drops triplets whose relation is not in `vocab` (e.g. on a held-out split).
pub fn apply_relation_vocab(records: &[RawRecord], vocab: &RelationVocab) -> Result<(Vec<RawRecord>, DropCounts)> {
    retain_triplets(records, "relation pruning", |t| vocab.index_of(&t[0]).is_some())
}

/// Drops triplets with an out-of-dictionary word and tokens missing from the table.
pub fn filter_dictionary(records: &[RawRecord], table: &WordTable) -> Result<(Vec<RawRecord>, DropCounts)> {
    let (mut out, drops) = retain_triplets(records, "dictionary filtering", |t| {
        table.contains(&t[1]) && table.contains(&t[2])
    })?;
    for sentence in out.iter_mut().flat_map(|r| &mut r.sentences) {
        sentence.tokens.retain(|w| table.contains(w));
    }
    Ok((out, drops))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FragmentMode {
    /// Dependency triplets as given.
    Triplets,
    /// One `(w, w)` fragment per token.
    Bow,
    /// One fragment per pair of consecutive tokens.
    Bigram,
    /// One averaged, L2-normalized word vector per sentence and one averaged
    /// feature vector per image.
    Devise,
    /// Triplets, but only the whole-image fragment (the last one of each record).
    FullframeOnly,
}

impl FragmentMode {
    pub const ALL: [FragmentMode; 5] = [
        FragmentMode::Triplets,
        FragmentMode::Bow,
        FragmentMode::Bigram,
        FragmentMode::Devise,
        FragmentMode::FullframeOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FragmentMode::Triplets => "triplets",
            FragmentMode::Bow => "bow",
            FragmentMode::Bigram => "bigram",
            FragmentMode::Devise => "devise",
            FragmentMode::FullframeOnly => "fullframe_only",
        }
    }
}

impl fmt::Display for FragmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FragmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FragmentMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown fragment mode `{s}`")))
    }
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for r in rows {
        for (o, x) in out.iter_mut().zip(r) {
            *o += x;
        }
    }
    let n = rows.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

fn devise_sentence(tokens: &[String], table: &WordTable) -> Result<Vec<f64>> {
    let mut rows = Vec::with_capacity(tokens.len());
    for t in tokens {
        let v = table.get(t)?;
        let norm = v.dot(&v).sqrt();
        if norm > 0.0 {
            rows.push(v.iter().map(|x| x / norm).collect());
        } else {
            rows.push(v.to_vec());
        }
    }
    Ok(mean_rows(&rows))
}

/// Turns preprocessed records into encoder-ready fragments.
///
/// `relations` is used by the triplet-based modes; BOW and bigram replace it
/// with their single pseudo-relation and DeViSE uses none.
pub fn build_fragments(
    records: &[RawRecord],
    image_dim: usize,
    relations: &RelationVocab,
    mode: FragmentMode,
    table: &WordTable,
) -> Result<Corpus> {
    let vocab = match mode {
        FragmentMode::Triplets | FragmentMode::FullframeOnly => relations.clone(),
        FragmentMode::Bow => RelationVocab::new([BOW_RELATION])?,
        FragmentMode::Bigram => RelationVocab::new([BIGRAM_RELATION])?,
        FragmentMode::Devise => RelationVocab::default(),
    };
    let mut items = Vec::with_capacity(records.len());
    let mut dropped = 0usize;
    for record in records {
        if record.image_fragments.is_empty() {
            return Err(Error::Input(format!(
                "record `{}` has no image fragments",
                record.image_id
            )));
        }
        let image_fragments = match mode {
            FragmentMode::Devise => vec![ImageFragment::new(mean_rows(&record.image_fragments))],
            FragmentMode::FullframeOnly => vec![ImageFragment::new(record.image_fragments.last().unwrap().clone())],
            _ => record.image_fragments.iter().cloned().map(ImageFragment::new).collect(),
        };

        let mut sentences = Vec::with_capacity(record.sentences.len());
        for sentence in &record.sentences {
            let needs_tokens = matches!(mode, FragmentMode::Bow | FragmentMode::Bigram | FragmentMode::Devise);
            if needs_tokens && sentence.tokens.is_empty() {
                return Err(Error::Input(format!(
                    "{mode} mode needs tokens but a sentence of `{}` has none",
                    record.image_id
                )));
            }
            let frags: Vec<SentenceFragment> = match mode {
                FragmentMode::Triplets | FragmentMode::FullframeOnly => sentence
                    .triplets
                    .iter()
                    .map(|[rel, w1, w2]| {
                        let r = vocab
                            .index_of(rel)
                            .ok_or_else(|| Error::Input(format!("relation `{rel}` not in vocabulary")))?;
                        Ok(SentenceFragment::triplet(r, w1.clone(), w2.clone()))
                    })
                    .collect::<Result<_>>()?,
                FragmentMode::Bow => sentence
                    .tokens
                    .iter()
                    .map(|w| SentenceFragment::triplet(0, w.clone(), w.clone()))
                    .collect(),
                FragmentMode::Bigram => sentence
                    .tokens
                    .windows(2)
                    .map(|w| SentenceFragment::triplet(0, w[0].clone(), w[1].clone()))
                    .collect(),
                FragmentMode::Devise => vec![SentenceFragment::Direct(devise_sentence(&sentence.tokens, table)?)],
            };
            if frags.is_empty() {
                dropped += 1;
            } else {
                sentences.push(frags);
            }
        }
        if sentences.is_empty() {
            log::warn!("{mode}: record `{}` has no usable sentences, skipped", record.image_id);
            continue;
        }
        items.push(CorpusItem {
            image_id: record.image_id.clone(),
            image_fragments,
            sentences,
        });
    }
    if dropped > 0 {
        log::warn!("{mode}: dropped {dropped} sentences that yield no fragments");
    }
    if items.is_empty() {
        return Err(Error::EmptyCorpus {
            stage: "fragment construction",
        });
    }
    Corpus::new(image_dim, vocab, items)
}
