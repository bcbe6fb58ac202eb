//! The combined training objective `C = C_F + β C_G + α ‖W‖²` and its
//! analytic subgradients.
//!
//! Gradients treat the fragment labels as constants at their current
//! assignment and use subgradient 0 at every hinge and ReLU kink.

mod fragment;
mod global;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

pub use fragment::{
    dense_labels, fragment_loss_c0, fragment_loss_dense, fragment_loss_mil, kappa_weights, mil_assign_labels,
    score_matrix, FragmentLoss,
};
pub use global::{global_ranking_loss, image_sentence_score, item_scores};

use crate::error::{Error, Result};
use crate::model::{encode_batch, EncodedBatch, ModelParams, Pair, SentenceTrace};
use crate::words::WordTable;

/// Ownership maps for one encoded batch.
///
/// `image_owner[i]` / `sentence_owner[j]` give the batch slot of each fragment
/// row; the positive bag of sentence row `j` is every image row of the same slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BagStructure {
    image_owner: Vec<usize>,
    sentence_owner: Vec<usize>,
    image_rows: Vec<Vec<usize>>,
    sentence_rows: Vec<Vec<usize>>,
}

impl BagStructure {
    pub fn new(image_owner: Vec<usize>, sentence_owner: Vec<usize>, num_items: usize) -> Result<Self> {
        let group = |owner: &[usize], what: &str| -> Result<Vec<Vec<usize>>> {
            let mut rows = vec![Vec::new(); num_items];
            for (row, &item) in owner.iter().enumerate() {
                rows.get_mut(item)
                    .ok_or_else(|| Error::Structure(format!("{what} row {row} owned by missing item {item}")))?
                    .push(row);
            }
            Ok(rows)
        };
        let image_rows = group(&image_owner, "image")?;
        let sentence_rows = group(&sentence_owner, "sentence")?;
        if let Some(item) = image_rows.iter().position(Vec::is_empty) {
            return Err(Error::Structure(format!("item {item} has no image fragments")));
        }
        Ok(BagStructure {
            image_owner,
            sentence_owner,
            image_rows,
            sentence_rows,
        })
    }

    pub fn num_items(&self) -> usize {
        self.image_rows.len()
    }

    pub fn num_image_rows(&self) -> usize {
        self.image_owner.len()
    }

    pub fn num_sentence_rows(&self) -> usize {
        self.sentence_owner.len()
    }

    pub fn image_owner(&self) -> &[usize] {
        &self.image_owner
    }

    pub fn sentence_owner(&self) -> &[usize] {
        &self.sentence_owner
    }

    /// `p_j`: image rows sharing sentence row `j`'s item.
    pub fn positive_bag(&self, sentence_row: usize) -> &[usize] {
        &self.image_rows[self.sentence_owner[sentence_row]]
    }

    pub fn image_rows(&self, item: usize) -> Result<&[usize]> {
        self.image_rows
            .get(item)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Structure(format!("no image {item} in batch")))
    }

    pub fn sentence_rows(&self, item: usize) -> Result<&[usize]> {
        self.sentence_rows
            .get(item)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Structure(format!("no sentence {item} in batch")))
    }

    pub(crate) fn image_rows_unchecked(&self, item: usize) -> &[usize] {
        &self.image_rows[item]
    }

    pub(crate) fn sentence_rows_unchecked(&self, item: usize) -> &[usize] {
        &self.sentence_rows[item]
    }
}

/// Pairwise fragment scores, `n_v × n_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(pub Array2<f64>);

/// Fragment labels in `{-1, +1}`, `n_v × n_s`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix(pub Array2<i8>);

impl LabelMatrix {
    /// Whether both MIL constraints hold: cross pairs negative, and at least
    /// one positive inside every positive bag.
    pub fn is_feasible(&self, bags: &BagStructure) -> bool {
        let (n_v, n_s) = self.0.dim();
        if n_v != bags.num_image_rows() || n_s != bags.num_sentence_rows() {
            return false;
        }
        (0..n_s).all(|j| {
            let owner = bags.sentence_owner()[j];
            let cross_ok = (0..n_v)
                .filter(|&i| bags.image_owner()[i] != owner)
                .all(|i| self.0[[i, j]] == -1);
            let labels_ok = (0..n_v).all(|i| self.0[[i, j]] == 1 || self.0[[i, j]] == -1);
            let bag_ok = bags.positive_bag(j).iter().any(|&i| self.0[[i, j]] == 1);
            cross_ok && labels_ok && bag_ok
        })
    }
}

/// Which terms of the objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// `C₀` with dense labels only.
    FragmentOnly,
    /// `C_G` only.
    GlobalOnly,
    /// Dense `C₀ + β C_G`.
    CombinedDense,
    /// `C_F + β C_G`, MIL labels once the schedule switches over.
    CombinedMil,
}

impl ObjectiveMode {
    pub const ALL: [ObjectiveMode; 4] = [
        ObjectiveMode::FragmentOnly,
        ObjectiveMode::GlobalOnly,
        ObjectiveMode::CombinedDense,
        ObjectiveMode::CombinedMil,
    ];

    pub fn uses_fragment(self) -> bool {
        self != ObjectiveMode::GlobalOnly
    }

    pub fn uses_global(self) -> bool {
        self != ObjectiveMode::FragmentOnly
    }

    pub fn uses_mil(self) -> bool {
        self == ObjectiveMode::CombinedMil
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveMode::FragmentOnly => "fragment_only",
            ObjectiveMode::GlobalOnly => "global_only",
            ObjectiveMode::CombinedDense => "combined_dense",
            ObjectiveMode::CombinedMil => "combined_mil",
        }
    }
}

impl fmt::Display for ObjectiveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectiveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectiveMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    /// Weight of the global ranking term.
    pub beta: f64,
    /// L2 weight on the weight matrices.
    pub alpha: f64,
    /// Ranking margin.
    pub delta: f64,
    /// Additive smoothing on the sentence-length normalizer of `S_kl`.
    pub smoothing_n: f64,
    pub mode: ObjectiveMode,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            beta: 0.5,
            alpha: 1e-5,
            delta: 1.0,
            smoothing_n: 10.0,
            mode: ObjectiveMode::CombinedMil,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.beta) || !ok(self.alpha) || !ok(self.smoothing_n) {
            return Err(Error::Config(
                "beta, alpha and smoothing_n must be finite and non-negative".into(),
            ));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

/// How fragment labels are chosen for one evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Labels<'a> {
    Dense,
    Mil,
    Fixed(&'a LabelMatrix),
}

#[derive(Debug, Clone)]
pub struct ObjectiveValue {
    /// `C_F` (or `C₀`); zero when the mode disables it.
    pub fragment: f64,
    /// Unweighted `C_G`; zero when the mode disables it.
    pub global: f64,
    /// `α ‖W‖²`.
    pub regularizer: f64,
    pub total: f64,
    pub labels: LabelMatrix,
    pub item_scores: Array2<f64>,
}

/// Everything computed on the way to the loss, kept for the backward pass.
pub(crate) struct Forward {
    pub batch: EncodedBatch,
    pub scores: ScoreMatrix,
    pub value: ObjectiveValue,
}

pub(crate) fn forward(
    params: &ModelParams,
    table: &WordTable,
    pairs: &[Pair<'_>],
    cfg: &ObjectiveConfig,
    labels: Labels<'_>,
) -> Result<Forward> {
    cfg.validate()?;
    let batch = encode_batch(params, table, pairs)?;
    let scores = score_matrix(batch.images.view(), batch.sentences.view())?;
    let labels = match labels {
        Labels::Dense => dense_labels(&batch.bags),
        Labels::Mil => mil_assign_labels(&scores, &batch.bags)?,
        Labels::Fixed(y) => y.clone(),
    };
    let fragment = if cfg.mode.uses_fragment() {
        fragment_loss_c0(&scores, &labels)?
    } else {
        0.0
    };
    let item_scores = item_scores(&scores, &batch.bags, cfg.smoothing_n)?;
    let global = if cfg.mode.uses_global() {
        global_ranking_loss(&item_scores, cfg.delta)?
    } else {
        0.0
    };
    let regularizer = cfg.alpha * params.weight_sq_norm();
    let total = fragment + cfg.beta * global + regularizer;
    Ok(Forward {
        batch,
        scores,
        value: ObjectiveValue {
            fragment,
            global,
            regularizer,
            total,
            labels,
            item_scores,
        },
    })
}

impl Forward {
    /// Arguments of every `max(0, ·)` that the loss passes through, in a fixed
    /// order. A sign change in any of them between two parameter settings
    /// means a kink lies between them.
    pub(crate) fn kink_arguments(&self, cfg: &ObjectiveConfig) -> Vec<f64> {
        let mut out = Vec::new();
        for trace in &self.batch.sentence_traces {
            if let SentenceTrace::Triplet { pre_activation, .. } = trace {
                out.extend(pre_activation.iter().copied());
            }
        }
        if cfg.mode.uses_fragment() {
            out.extend(
                self.scores
                    .0
                    .iter()
                    .zip(self.value.labels.0.iter())
                    .map(|(&k, &y)| 1.0 - f64::from(y) * k),
            );
        }
        if cfg.mode.uses_global() {
            out.extend(self.scores.0.iter().copied());
            let s = &self.value.item_scores;
            let n = s.nrows();
            for a in 0..n {
                for b in (0..n).filter(|&b| b != a) {
                    out.push(s[[a, b]] - s[[a, a]] + cfg.delta);
                    out.push(s[[b, a]] - s[[a, a]] + cfg.delta);
                }
            }
        }
        out
    }

    pub(crate) fn backward(&self, params: &ModelParams, cfg: &ObjectiveConfig) -> ModelParams {
        let bags = &self.batch.bags;
        let mut d_scores = Array2::zeros(self.scores.0.dim());
        if cfg.mode.uses_fragment() {
            d_scores += &fragment::fragment_loss_c0_grad(&self.scores, &self.value.labels);
        }
        if cfg.mode.uses_global() && cfg.beta != 0.0 {
            let d_smat = global::global_ranking_grad(&self.value.item_scores, cfg.delta) * cfg.beta;
            d_scores += &global::item_scores_backward(&self.scores, bags, cfg.smoothing_n, &d_smat);
        }

        // K = V Sᵀ
        let d_images = d_scores.dot(&self.batch.sentences);
        let d_sentences = d_scores.t().dot(&self.batch.images);

        let mut grads = params.zeros_like();
        grads.image_proj = d_images.t().dot(&self.batch.image_inputs);
        for (trace, d_out) in self.batch.sentence_traces.iter().zip(d_sentences.axis_iter(Axis(0))) {
            if let SentenceTrace::Triplet {
                relation,
                input,
                pre_activation,
            } = trace
            {
                let d_pre: Array1<f64> = d_out
                    .iter()
                    .zip(pre_activation.iter())
                    .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                    .collect();
                let rel = &mut grads.relations[*relation];
                let outer = d_pre
                    .view()
                    .insert_axis(Axis(1))
                    .dot(&input.view().insert_axis(Axis(0)));
                rel.weight += &outer;
                rel.bias += &d_pre;
            }
        }

        if cfg.alpha != 0.0 {
            let two_alpha = 2.0 * cfg.alpha;
            grads.image_proj.scaled_add(two_alpha, &params.image_proj);
            for (g, p) in grads.relations.iter_mut().zip(&params.relations) {
                g.weight.scaled_add(two_alpha, &p.weight);
            }
        }
        grads
    }
}

/// Evaluates the objective on one batch of image-sentence pairs.
pub fn total_objective(
    params: &ModelParams,
    table: &WordTable,
    pairs: &[Pair<'_>],
    cfg: &ObjectiveConfig,
    labels: Labels<'_>,
) -> Result<ObjectiveValue> {
    forward(params, table, pairs, cfg, labels).map(|f| f.value)
}

/// Objective value together with its subgradient for every trainable tensor.
pub fn objective_gradients(
    params: &ModelParams,
    table: &WordTable,
    pairs: &[Pair<'_>],
    cfg: &ObjectiveConfig,
    labels: Labels<'_>,
) -> Result<(ObjectiveValue, ModelParams)> {
    let fwd = forward(params, table, pairs, cfg, labels)?;
    let grads = fwd.backward(params, cfg);
    Ok((fwd.value, grads))
}
