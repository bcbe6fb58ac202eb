//! Central finite-difference check of the analytic objective gradients.

use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::model::{Dims, ImageFragment, ModelParams, Pair, SentenceFragment};
use crate::objective::{forward, Labels, ObjectiveConfig};
use crate::words::WordTable;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorReport {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    /// Flat index of the worst checked entry.
    pub worst_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Offender {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
    pub tensors: Vec<TensorReport>,
    pub worst: Option<Offender>,
}

impl GradCheckReport {
    pub fn skipped_fraction(&self) -> f64 {
        let total = self.checked + self.skipped;
        if total == 0 {
            0.0
        } else {
            self.skipped as f64 / total as f64
        }
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<24} {:>8} {:>8} {:>12}",
            "tensor", "checked", "skipped", "max_rel_err"
        )?;
        for t in &self.tensors {
            writeln!(
                f,
                "{:<24} {:>8} {:>8} {:>12.3e}",
                t.name, t.checked, t.skipped, t.max_rel_err
            )?;
        }
        write!(
            f,
            "overall: checked {} skipped {} max_rel_err {:.3e}",
            self.checked, self.skipped, self.max_rel_err
        )?;
        if let Some(w) = &self.worst {
            write!(
                f,
                "\nworst: {}[{}] analytic {:.12e} numeric {:.12e}",
                w.tensor, w.index, w.analytic, w.numeric
            )?;
        }
        Ok(())
    }
}

/// Gradient magnitude below which entries are compared in absolute terms.
///
/// Central differences at `eps = 1e-5` carry roughly `1e-11..1e-10` of rounding
/// noise, so a gradient of `1e-7` cannot be resolved to a relative `1e-6`.
pub const GRAD_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, GRAD_FLOOR)`, and 0 when the two agree exactly.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if analytic == numeric {
        return 0.0;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

fn straddles_kink(minus: &[f64], plus: &[f64], base: &[f64], kink_tol: f64) -> bool {
    minus.iter().zip(plus).zip(base).any(|((&m, &p), &b)| {
        let crossed = (m > 0.0) != (p > 0.0);
        let moved_near_kink = b.abs() < kink_tol && m != p;
        crossed || moved_near_kink
    })
}

/// Compares every analytic gradient entry against
/// `(C(θ + eps) - C(θ - eps)) / (2 eps)`.
///
/// Labels are assigned once at `params` (MIL or dense per `labels`) and held
/// fixed for both probes. An entry is skipped when a probe moves any
/// `max(0, ·)` argument across zero, or moves one that starts within
/// `kink_tol` of zero.
pub fn grad_check(
    params: &ModelParams,
    table: &WordTable,
    pairs: &[Pair<'_>],
    obj_cfg: &ObjectiveConfig,
    labels: Labels<'_>,
    eps: f64,
    kink_tol: f64,
) -> Result<GradCheckReport> {
    let base = forward(params, table, pairs, obj_cfg, labels)?;
    let analytic = base.backward(params, obj_cfg);
    let frozen = base.value.labels.clone();
    let base_kinks = base.kink_arguments(obj_cfg);

    let mut probe = params.clone();
    let mut tensors = Vec::new();
    let mut worst: Option<Offender> = None;
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let analytic_tensors = analytic.tensors();

    for (t, name) in names.iter().enumerate() {
        let grad = analytic_tensors[t].1;
        let mut report = TensorReport {
            name: name.clone(),
            checked: 0,
            skipped: 0,
            max_rel_err: 0.0,
            worst_index: None,
        };
        for (index, &a) in grad.iter().enumerate() {
            let original = probe.tensors()[t].1[index];
            let mut eval_at = |value: f64| -> Result<(f64, Vec<f64>)> {
                probe.tensors_mut()[t].1[index] = value;
                let fwd = forward(&probe, table, pairs, obj_cfg, Labels::Fixed(&frozen))?;
                Ok((fwd.value.total, fwd.kink_arguments(obj_cfg)))
            };
            let (c_plus, k_plus) = eval_at(original + eps)?;
            let (c_minus, k_minus) = eval_at(original - eps)?;
            probe.tensors_mut()[t].1[index] = original;

            if straddles_kink(&k_minus, &k_plus, &base_kinks, kink_tol) {
                report.skipped += 1;
                continue;
            }
            let numeric = (c_plus - c_minus) / (2.0 * eps);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst_index.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst_index = Some(index);
            }
            if worst.as_ref().is_none_or(|w| err > w.rel_err) {
                worst = Some(Offender {
                    tensor: name.clone(),
                    index,
                    analytic: a,
                    numeric,
                    rel_err: err,
                });
            }
        }
        tensors.push(report);
    }

    Ok(GradCheckReport {
        max_rel_err: tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max),
        checked: tensors.iter().map(|t| t.checked).sum(),
        skipped: tensors.iter().map(|t| t.skipped).sum(),
        tensors,
        worst,
    })
}

/// Small self-contained random problem for gradient checking.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub table: WordTable,
    pub params: ModelParams,
    pub images: Vec<Vec<ImageFragment>>,
    pub sentences: Vec<Vec<SentenceFragment>>,
}

impl GradCheckInstance {
    /// Random words, fragments and parameters. Each item gets 1–3 image
    /// fragments and 1–3 triplets over `num_relations` relation types.
    pub fn random(seed: u64, dims: Dims, num_items: usize, num_relations: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
        let entries: Vec<(String, Vec<f64>)> = words
            .iter()
            .map(|w| {
                (
                    w.clone(),
                    (0..dims.word_dim).map(|_| rng.sample(StandardNormal)).collect(),
                )
            })
            .collect();
        let table = WordTable::from_entries(dims.word_dim, entries)?;

        let mut params = ModelParams::init(dims, num_relations, &mut rng);
        for rel in &mut params.relations {
            rel.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }

        let mut images = Vec::with_capacity(num_items);
        let mut sentences = Vec::with_capacity(num_items);
        for _ in 0..num_items {
            let n_img = rng.random_range(1..=3);
            images.push(
                (0..n_img)
                    .map(|_| ImageFragment::new((0..dims.image_dim).map(|_| rng.sample(StandardNormal)).collect()))
                    .collect(),
            );
            let n_sent = rng.random_range(1..=3);
            sentences.push(
                (0..n_sent)
                    .map(|_| {
                        SentenceFragment::triplet(
                            rng.random_range(0..num_relations),
                            words[rng.random_range(0..words.len())].clone(),
                            words[rng.random_range(0..words.len())].clone(),
                        )
                    })
                    .collect(),
            );
        }
        Ok(GradCheckInstance {
            table,
            params,
            images,
            sentences,
        })
    }

    pub fn pairs(&self) -> Vec<Pair<'_>> {
        self.images
            .iter()
            .zip(&self.sentences)
            .map(|(i, s)| Pair { image: i, sentence: s })
            .collect()
    }
}

/// Plain-text rendering used by the CLI so reports are reproducible byte for byte.
pub fn render_report(seed: u64, threshold: f64, report: &GradCheckReport) -> String {
    let mut out = String::new();
    writeln!(out, "gradcheck seed {seed} threshold {threshold:e}").unwrap();
    writeln!(out, "{report}").unwrap();
    let verdict = if report.max_rel_err < threshold { "PASS" } else { "FAIL" };
    writeln!(out, "{verdict}").unwrap();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::ObjectiveMode;

    fn dims() -> Dims {
        Dims {
            word_dim: 4,
            embed_dim: 5,
            image_dim: 6,
        }
    }

    #[test]
    fn quadratic_term_is_near_exact() {
        // with beta = 0 and the fragment term off only the regularizer remains;
        // few weights of order one keep the rounding in C below the bar
        let small = Dims {
            word_dim: 1,
            embed_dim: 2,
            image_dim: 1,
        };
        let mut inst = GradCheckInstance::random(11, small, 2, 1).unwrap();
        for (i, (_, t)) in inst.params.tensors_mut().into_iter().enumerate() {
            t.iter_mut()
                .enumerate()
                .for_each(|(j, x)| *x = 0.6 + 0.1 * (i + j) as f64);
        }
        let cfg = ObjectiveConfig {
            alpha: 0.5,
            beta: 0.0,
            mode: ObjectiveMode::GlobalOnly,
            ..Default::default()
        };
        let r = grad_check(
            &inst.params,
            &inst.table,
            &inst.pairs(),
            &cfg,
            Labels::Dense,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-9, "{r}");
        assert_eq!(r.skipped, 0);
    }

    #[test]
    fn random_instance_passes() {
        let inst = GradCheckInstance::random(3, dims(), 3, 2).unwrap();
        let cfg = ObjectiveConfig::default();
        let r = grad_check(&inst.params, &inst.table, &inst.pairs(), &cfg, Labels::Mil, 1e-5, 1e-4).unwrap();
        assert!(r.max_rel_err < 1e-6, "{r}");
        assert!(r.checked > 0);
    }

    #[test]
    fn flat_region_reports_zero() {
        let inst = GradCheckInstance::random(5, dims(), 3, 2).unwrap();
        let params = inst.params.zeros_like();
        // zero weights, zero biases: ranking terms all active but K = 0 sits on
        // the thresholding kink, so only the fragment term carries signal
        let cfg = ObjectiveConfig {
            alpha: 0.0,
            mode: ObjectiveMode::FragmentOnly,
            ..Default::default()
        };
        let r = grad_check(&params, &inst.table, &inst.pairs(), &cfg, Labels::Dense, 1e-5, 1e-4).unwrap();
        for t in &r.tensors {
            assert!(t.max_rel_err == 0.0, "{r}");
        }
    }

    #[test]
    fn relative_error_definition() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 0.5), 0.5);
        assert_eq!(relative_error(2e-7, 1e-7), 1e-7 / GRAD_FLOOR);
        assert_eq!(relative_error(-2.0, -2.0), 0.0);
    }
}
