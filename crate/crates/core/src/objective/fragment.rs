//! Fragment alignment objective: κ-balanced hinge loss over fragment pairs,
//! with either dense within-item labels or MIL-inferred labels.

use ndarray::{Array2, ArrayView2};

use super::{BagStructure, LabelMatrix, ScoreMatrix};
use crate::error::{Error, Result};

/// `K_ij = v_i · s_j`.
pub fn score_matrix(images: ArrayView2<'_, f64>, sentences: ArrayView2<'_, f64>) -> Result<ScoreMatrix> {
    if images.ncols() != sentences.ncols() {
        return Err(Error::Shape {
            context: "score matrix embedding width",
            expected: images.ncols(),
            actual: sentences.ncols(),
        });
    }
    Ok(ScoreMatrix(images.dot(&sentences.t())))
}

/// Dense labels: every within-item pair is positive, every cross pair negative.
pub fn dense_labels(bags: &BagStructure) -> LabelMatrix {
    let y = Array2::from_shape_fn((bags.num_image_rows(), bags.num_sentence_rows()), |(i, j)| {
        if bags.image_owner()[i] == bags.sentence_owner()[j] {
            1
        } else {
            -1
        }
    });
    LabelMatrix(y)
}

/// `κ_ij = 1 / (2 N₊)` for positives and `1 / (2 N₋)` for negatives.
pub fn kappa_weights(y: &LabelMatrix) -> Array2<f64> {
    let positives = y.0.iter().filter(|&&v| v > 0).count();
    let negatives = y.0.len() - positives;
    let weight = |count: usize| if count == 0 { 0.0 } else { 1.0 / (2.0 * count as f64) };
    let (wp, wn) = (weight(positives), weight(negatives));
    y.0.mapv(|v| if v > 0 { wp } else { wn })
}

fn check_shapes(k: &ScoreMatrix, y: &LabelMatrix) -> Result<()> {
    if k.0.dim() != y.0.dim() {
        return Err(Error::Shape {
            context: "label matrix element count",
            expected: k.0.len(),
            actual: y.0.len(),
        });
    }
    Ok(())
}

/// `Σ_ij κ_ij max(0, 1 - y_ij K_ij)`, summed in row-major order.
pub fn fragment_loss_c0(k: &ScoreMatrix, y: &LabelMatrix) -> Result<f64> {
    check_shapes(k, y)?;
    let kappa = kappa_weights(y);
    let mut total = 0.0;
    for ((&score, &label), &w) in k.0.iter().zip(y.0.iter()).zip(kappa.iter()) {
        let hinge = 1.0 - f64::from(label) * score;
        if hinge > 0.0 {
            total += w * hinge;
        }
    }
    Ok(total)
}

/// `∂C₀/∂K` with labels held fixed.
pub(crate) fn fragment_loss_c0_grad(k: &ScoreMatrix, y: &LabelMatrix) -> Array2<f64> {
    let kappa = kappa_weights(y);
    let mut grad = Array2::zeros(k.0.dim());
    ndarray::Zip::from(&mut grad)
        .and(&k.0)
        .and(&y.0)
        .and(&kappa)
        .for_each(|g, &score, &label, &w| {
            let label = f64::from(label);
            if 1.0 - label * score > 0.0 {
                *g = -w * label;
            }
        });
    grad
}

/// mi-SVM style label heuristic: `y_ij = sign(K_ij)` inside each positive bag
/// (with `sign(0) = -1`), `-1` for every cross-item pair, and if a column ends
/// up with no positive inside its bag the highest-scoring bag member (lowest
/// row on ties) is flipped to `+1`.
pub fn mil_assign_labels(k: &ScoreMatrix, bags: &BagStructure) -> Result<LabelMatrix> {
    let (n_v, n_s) = k.0.dim();
    if n_v != bags.num_image_rows() || n_s != bags.num_sentence_rows() {
        return Err(Error::Shape {
            context: "score matrix vs bag structure",
            expected: bags.num_image_rows() * bags.num_sentence_rows(),
            actual: n_v * n_s,
        });
    }
    let mut y = Array2::from_elem((n_v, n_s), -1i8);
    for j in 0..n_s {
        let bag = bags.positive_bag(j);
        if bag.is_empty() {
            return Err(Error::Structure(format!(
                "sentence fragment {j} has an empty positive bag"
            )));
        }
        let mut any_positive = false;
        let mut best = bag[0];
        for &i in bag {
            let score = k.0[[i, j]];
            if score > 0.0 {
                y[[i, j]] = 1;
                any_positive = true;
            }
            if score > k.0[[best, j]] {
                best = i;
            }
        }
        if !any_positive {
            y[[best, j]] = 1;
        }
    }
    Ok(LabelMatrix(y))
}

#[derive(Debug, Clone)]
pub struct FragmentLoss {
    pub loss: f64,
    pub labels: LabelMatrix,
}

/// MIL fragment loss `C_F`: assign labels with the heuristic, then evaluate `C₀`.
pub fn fragment_loss_mil(k: &ScoreMatrix, bags: &BagStructure) -> Result<FragmentLoss> {
    let labels = mil_assign_labels(k, bags)?;
    let loss = fragment_loss_c0(k, &labels)?;
    Ok(FragmentLoss { loss, labels })
}

/// Dense counterpart of [`fragment_loss_mil`].
pub fn fragment_loss_dense(k: &ScoreMatrix, bags: &BagStructure) -> Result<FragmentLoss> {
    let labels = dense_labels(bags);
    let loss = fragment_loss_c0(k, &labels)?;
    Ok(FragmentLoss { loss, labels })
}
