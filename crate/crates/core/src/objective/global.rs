//! Image-sentence scores built from thresholded fragment scores, and the
//! bidirectional margin ranking loss over a batch.

use ndarray::Array2;

use super::{BagStructure, ScoreMatrix};
use crate::error::{Error, Result};

fn normalizer(image_frags: usize, sentence_frags: usize, smoothing: f64) -> f64 {
    1.0 / (image_frags as f64 * (sentence_frags as f64 + smoothing))
}

/// `S_kl = Σ_{i∈g_k} Σ_{j∈g_l} max(0, K_ij) / (|g_k| (|g_l| + n))`.
pub fn image_sentence_score(
    k: &ScoreMatrix,
    bags: &BagStructure,
    image: usize,
    sentence: usize,
    smoothing: f64,
) -> Result<f64> {
    let (rows, cols) = (bags.image_rows(image)?, bags.sentence_rows(sentence)?);
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::Structure(format!(
            "image {image} or sentence {sentence} has no fragments"
        )));
    }
    let mut total = 0.0;
    for &i in rows {
        for &j in cols {
            total += k.0[[i, j]].max(0.0);
        }
    }
    Ok(total * normalizer(rows.len(), cols.len(), smoothing))
}

/// Full `N_b × N_b` matrix of [`image_sentence_score`] values.
pub fn item_scores(k: &ScoreMatrix, bags: &BagStructure, smoothing: f64) -> Result<Array2<f64>> {
    let n = bags.num_items();
    let mut out = Array2::zeros((n, n));
    for a in 0..n {
        for b in 0..n {
            out[[a, b]] = image_sentence_score(k, bags, a, b, smoothing)?;
        }
    }
    Ok(out)
}

fn check_square(smat: &Array2<f64>) -> Result<()> {
    if smat.nrows() != smat.ncols() {
        return Err(Error::Shape {
            context: "item score matrix must be square",
            expected: smat.nrows(),
            actual: smat.ncols(),
        });
    }
    Ok(())
}

/// `Σ_k Σ_{l≠k} [max(0, S_kl - S_kk + Δ) + max(0, S_lk - S_kk + Δ)]`.
///
/// The `l = k` terms are left out; including them would add the constant `2NΔ`.
pub fn global_ranking_loss(smat: &Array2<f64>, delta: f64) -> Result<f64> {
    check_square(smat)?;
    let n = smat.nrows();
    let mut total = 0.0;
    for a in 0..n {
        let diag = smat[[a, a]];
        for b in (0..n).filter(|&b| b != a) {
            total += (smat[[a, b]] - diag + delta).max(0.0);
            total += (smat[[b, a]] - diag + delta).max(0.0);
        }
    }
    Ok(total)
}

/// `∂C_G/∂S`.
pub(crate) fn global_ranking_grad(smat: &Array2<f64>, delta: f64) -> Array2<f64> {
    let n = smat.nrows();
    let mut grad = Array2::zeros((n, n));
    for a in 0..n {
        let diag = smat[[a, a]];
        for b in (0..n).filter(|&b| b != a) {
            if smat[[a, b]] - diag + delta > 0.0 {
                grad[[a, b]] += 1.0;
                grad[[a, a]] -= 1.0;
            }
            if smat[[b, a]] - diag + delta > 0.0 {
                grad[[b, a]] += 1.0;
                grad[[a, a]] -= 1.0;
            }
        }
    }
    grad
}

/// Pulls `∂C/∂S` back onto the fragment score matrix.
pub(crate) fn item_scores_backward(
    k: &ScoreMatrix,
    bags: &BagStructure,
    smoothing: f64,
    d_smat: &Array2<f64>,
) -> Array2<f64> {
    let mut grad = Array2::zeros(k.0.dim());
    let n = bags.num_items();
    for a in 0..n {
        let rows = &bags.image_rows_unchecked(a);
        for b in 0..n {
            let upstream = d_smat[[a, b]];
            if upstream == 0.0 {
                continue;
            }
            let cols = &bags.sentence_rows_unchecked(b);
            let scale = upstream * normalizer(rows.len(), cols.len(), smoothing);
            for &i in rows.iter() {
                for &j in cols.iter() {
                    if k.0[[i, j]] > 0.0 {
                        grad[[i, j]] += scale;
                    }
                }
            }
        }
    }
    grad
}
