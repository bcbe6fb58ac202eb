//! Bidirectional retrieval evaluation: dense image-sentence scores, ranks of
//! the closest ground truth, Recall@K and median/mean rank.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{encode_image_fragment, encode_sentence_fragment, Corpus, ModelParams};
use crate::words::WordTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Image query, sentences ranked.
    ImageAnnotation,
    /// Sentence query, images ranked.
    ImageSearch,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::ImageAnnotation => "image_annotation",
            Direction::ImageSearch => "image_search",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scores of every test image against every test sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseScores {
    /// `images × sentences`
    pub scores: Array2<f64>,
    /// Item (image) index that each sentence column belongs to.
    pub sentence_owner: Vec<usize>,
}

/// `S_kl` for every (image, sentence) pair of the split.
pub fn dense_scores(params: &ModelParams, table: &WordTable, corpus: &Corpus, smoothing: f64) -> Result<DenseScores> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus { stage: "evaluation" });
    }
    if corpus.image_dim != params.dims.image_dim {
        return Err(Error::Shape {
            context: "corpus image_dim vs checkpoint",
            expected: params.dims.image_dim,
            actual: corpus.image_dim,
        });
    }
    let images: Vec<Vec<ndarray::Array1<f64>>> = corpus
        .items
        .iter()
        .map(|item| {
            item.image_fragments
                .iter()
                .map(|f| encode_image_fragment(params, f))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let mut sentences = Vec::with_capacity(corpus.num_sentences());
    let mut sentence_owner = Vec::with_capacity(corpus.num_sentences());
    for (k, item) in corpus.items.iter().enumerate() {
        for sentence in &item.sentences {
            let frags = sentence
                .iter()
                .map(|f| encode_sentence_fragment(params, table, f))
                .collect::<Result<Vec<_>>>()?;
            sentences.push(frags);
            sentence_owner.push(k);
        }
    }

    let rows: Vec<Vec<f64>> = images
        .par_iter()
        .map(|img| {
            sentences
                .iter()
                .map(|sent| {
                    let mut total = 0.0;
                    for v in img {
                        for s in sent {
                            total += v.dot(s).max(0.0);
                        }
                    }
                    total / (img.len() as f64 * (sent.len() as f64 + smoothing))
                })
                .collect()
        })
        .collect();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let scores = Array2::from_shape_vec((images.len(), sentences.len()), flat).expect("rows have equal length");
    Ok(DenseScores { scores, sentence_owner })
}

fn rank_of_best(scores: ArrayView1<'_, f64>, is_truth: impl Fn(usize) -> bool) -> Option<usize> {
    let best = (0..scores.len())
        .filter(|&c| is_truth(c))
        .map(|c| scores[c])
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))))?;
    // pessimistic: ground truth goes after every competitor it ties with
    let ahead = (0..scores.len()).filter(|&c| !is_truth(c) && scores[c] >= best).count();
    Some(ahead + 1)
}

/// 1-based rank of the closest ground truth for each query.
///
/// Image annotation queries are the rows of `scores` (images); image search
/// queries are the columns (sentences). `sentence_owner[j]` is the true image
/// of sentence `j`.
pub fn rank_queries(scores: &Array2<f64>, sentence_owner: &[usize], direction: Direction) -> Result<Vec<usize>> {
    let (n_img, n_sent) = scores.dim();
    if sentence_owner.len() != n_sent {
        return Err(Error::Shape {
            context: "sentence correspondence",
            expected: n_sent,
            actual: sentence_owner.len(),
        });
    }
    if let Some(&bad) = sentence_owner.iter().find(|&&k| k >= n_img) {
        return Err(Error::Structure(format!(
            "sentence owner {bad} out of range for {n_img} images"
        )));
    }
    match direction {
        Direction::ImageAnnotation => (0..n_img)
            .map(|k| {
                rank_of_best(scores.row(k), |j| sentence_owner[j] == k)
                    .ok_or_else(|| Error::Structure(format!("image {k} has no ground-truth sentence")))
            })
            .collect(),
        Direction::ImageSearch => Ok((0..n_sent)
            .map(|j| rank_of_best(scores.column(j), |k| k == sentence_owner[j]).expect("owner checked above"))
            .collect()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub recall_at: BTreeMap<usize, f64>,
    pub median_rank: f64,
    pub mean_rank: f64,
    pub ranks: Vec<usize>,
}

impl RetrievalReport {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_at.get(&k).copied()
    }
}

pub fn summarize(direction: Direction, ranks: Vec<usize>, ks: &[usize]) -> Result<RetrievalReport> {
    if ranks.is_empty() {
        return Err(Error::Input("cannot summarize an empty rank list".into()));
    }
    let n = ranks.len() as f64;
    let recall_at = ks
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect();
    let mut sorted = ranks.clone();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    let median_rank = if sorted.len() % 2 == 1 {
        sorted[mid] as f64
    } else {
        (sorted[mid - 1] + sorted[mid]) as f64 / 2.0
    };
    let mean_rank = ranks.iter().sum::<usize>() as f64 / n;
    Ok(RetrievalReport {
        direction,
        recall_at,
        median_rank,
        mean_rank,
        ranks,
    })
}

/// Keeps only the first sentence of every item.
pub fn hodosh_subset(corpus: &Corpus) -> Corpus {
    let mut out = corpus.clone();
    for item in &mut out.items {
        item.sentences.truncate(1);
    }
    out
}

/// Both directions, in annotation-then-search order.
pub fn evaluate(
    params: &ModelParams,
    table: &WordTable,
    corpus: &Corpus,
    smoothing: f64,
    ks: &[usize],
) -> Result<[RetrievalReport; 2]> {
    let dense = dense_scores(params, table, corpus, smoothing)?;
    let report =
        |d| -> Result<RetrievalReport> { summarize(d, rank_queries(&dense.scores, &dense.sentence_owner, d)?, ks) };
    Ok([report(Direction::ImageAnnotation)?, report(Direction::ImageSearch)?])
}

/// Aligned text table, one row per `(label, reports)` entry, with the
/// annotation columns followed by the search columns.
pub fn render_table(rows: &[(String, [RetrievalReport; 2])], ks: &[usize]) -> String {
    let label_width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let block = ks.len() * 7 + 16;
    writeln!(
        out,
        "{:<w$} | {:<b$} | {:<b$}",
        "",
        "Image Annotation",
        "Image Search",
        w = label_width,
        b = block
    )
    .unwrap();
    let mut header = String::new();
    for k in ks {
        write!(header, "{:>6} ", format!("R@{k}")).unwrap();
    }
    write!(header, "{:>7} {:>8}", "Med r", "Mean r").unwrap();
    writeln!(out, "{:<w$} | {header} | {header}", "Model", w = label_width).unwrap();
    writeln!(out, "{}", "-".repeat(label_width + 2 * (block + 3))).unwrap();
    for (label, reports) in rows {
        write!(out, "{label:<label_width$}").unwrap();
        for r in reports {
            out.push_str(" | ");
            for k in ks {
                write!(out, "{:>6.1} ", 100.0 * r.recall(*k).unwrap_or(f64::NAN)).unwrap();
            }
            write!(out, "{:>7.1} {:>8.2}", r.median_rank, r.mean_rank).unwrap();
        }
        out.push('\n');
    }
    out
}

/// `label,direction,queries,r@K...,median_rank,mean_rank`.
pub fn render_csv(rows: &[(String, [RetrievalReport; 2])], ks: &[usize]) -> String {
    let mut out = String::from("label,direction,queries");
    for k in ks {
        write!(out, ",r@{k}").unwrap();
    }
    out.push_str(",median_rank,mean_rank\n");
    for (label, reports) in rows {
        for r in reports {
            write!(out, "{label},{},{}", r.direction, r.ranks.len()).unwrap();
            for k in ks {
                write!(out, ",{}", r.recall(*k).unwrap_or(f64::NAN)).unwrap();
            }
            writeln!(out, ",{},{}", r.median_rank, r.mean_rank).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dominant_diagonal_ranks_first() {
        let s = array![[0.9, 0.1], [0.2, 0.8]];
        for d in [Direction::ImageAnnotation, Direction::ImageSearch] {
            assert_eq!(rank_queries(&s, &[0, 1], d).unwrap(), vec![1, 1]);
        }
    }

    #[test]
    fn ties_are_pessimistic() {
        let s = Array2::from_elem((4, 4), 0.3);
        for d in [Direction::ImageAnnotation, Direction::ImageSearch] {
            assert_eq!(rank_queries(&s, &[0, 1, 2, 3], d).unwrap(), vec![4; 4]);
        }
    }

    #[test]
    fn closest_of_several_ground_truths() {
        // image 0 owns sentences 0..5, image 1 owns 5..7
        let s = array![
            [0.1, 0.2, 0.9, 0.0, 0.3, 0.95, 0.5],
            [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.8]
        ];
        let owner = [0, 0, 0, 0, 0, 1, 1];
        let r = rank_queries(&s, &owner, Direction::ImageAnnotation).unwrap();
        // image 0: sorted desc 0.95(x) 0.9(gt) -> rank 2; image 1: 1.0 gt -> 1
        assert_eq!(r, vec![2, 1]);
        let r = rank_queries(&s, &owner, Direction::ImageSearch).unwrap();
        // sentence 3 scores 0.0 against both images: the tie counts against it
        assert_eq!(r, vec![1, 1, 1, 2, 1, 1, 1]);
    }

    #[test]
    fn summary_examples() {
        let rep = summarize(Direction::ImageSearch, vec![1, 3, 11], &[1, 5, 10]).unwrap();
        assert!((rep.recall(5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rep.median_rank, 3.0);
        assert_eq!(rep.mean_rank, 5.0);
        let rep = summarize(Direction::ImageSearch, vec![4, 1, 2, 9], &[1]).unwrap();
        assert_eq!(rep.median_rank, 3.0);
        let rep = summarize(Direction::ImageAnnotation, vec![1; 7], &[1, 5]).unwrap();
        assert_eq!(rep.recall(1), Some(1.0));
        assert_eq!(rep.median_rank, 1.0);
        assert!(summarize(Direction::ImageAnnotation, vec![], &[1]).is_err());
    }

    #[test]
    fn correspondence_mismatch() {
        let s = Array2::zeros((2, 3));
        assert!(rank_queries(&s, &[0, 1], Direction::ImageSearch).is_err());
        assert!(rank_queries(&s, &[0, 1, 2], Direction::ImageSearch).is_err());
        // image 1 has no sentence
        assert!(rank_queries(&s, &[0, 0, 0], Direction::ImageAnnotation).is_err());
    }
}
