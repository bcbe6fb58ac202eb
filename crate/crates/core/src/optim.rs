//! Mini-batch SGD with momentum and the staged training schedule.
//!
//! Epochs before `mil_start_epoch` train on the dense fragment objective; the
//! rest use MIL labels (only in `combined_mil` mode). The last
//! `anneal_last_epochs` epochs run at `lr * anneal_factor`.

use std::fmt::{self, Write as _};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Corpus, ModelParams, Pair};
use crate::objective::{objective_gradients, Labels, ObjectiveConfig};
use crate::words::WordTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub epochs: usize,
    pub lr: f64,
    pub anneal_factor: f64,
    pub anneal_last_epochs: usize,
    /// First (0-indexed) epoch that uses MIL labels.
    pub mil_start_epoch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 100,
            momentum: 0.9,
            epochs: 15,
            lr: 1e-2,
            anneal_factor: 0.1,
            anneal_last_epochs: 2,
            mil_start_epoch: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || !self.anneal_factor.is_finite() {
            return Err(Error::Config(
                "lr and anneal_factor must be finite, lr non-negative".into(),
            ));
        }
        if self.anneal_last_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "anneal_last_epochs ({}) must be smaller than epochs ({})",
                self.anneal_last_epochs, self.epochs
            )));
        }
        if self.mil_start_epoch > self.epochs {
            return Err(Error::Config(format!(
                "mil_start_epoch ({}) exceeds epochs ({})",
                self.mil_start_epoch, self.epochs
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch + self.anneal_last_epochs >= self.epochs {
            self.lr * self.anneal_factor
        } else {
            self.lr
        }
    }

    pub fn phase_at(&self, epoch: usize, obj: &ObjectiveConfig) -> Phase {
        if obj.mode.uses_mil() && epoch >= self.mil_start_epoch {
            Phase::Mil
        } else {
            Phase::Dense
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Dense,
    Mil,
}

impl Phase {
    pub fn labels(self) -> Labels<'static> {
        match self {
            Phase::Dense => Labels::Dense,
            Phase::Mil => Labels::Mil,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Dense => "dense",
            Phase::Mil => "mil",
        })
    }
}

/// Momentum buffers, shaped like the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: ModelParams,
    pub epoch: usize,
    pub step: usize,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            velocity: params.zeros_like(),
            epoch: 0,
            step: 0,
        }
    }
}

/// `v ← μ v − lr g; θ ← θ + v` for every trainable tensor.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    for (name, g) in &grad_tensors {
        if let Some(index) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient {
                tensor: name.clone(),
                index,
            });
        }
    }
    let mut param_tensors = params.tensors_mut();
    let mut vel_tensors = state.velocity.tensors_mut();
    if param_tensors.len() != grad_tensors.len() || vel_tensors.len() != grad_tensors.len() {
        return Err(Error::Shape {
            context: "number of trainable tensors",
            expected: param_tensors.len(),
            actual: grad_tensors.len(),
        });
    }
    for (((_, theta), (_, vel)), (_, g)) in param_tensors.iter_mut().zip(vel_tensors.iter_mut()).zip(&grad_tensors) {
        if theta.len() != g.len() || vel.len() != g.len() {
            return Err(Error::Shape {
                context: "trainable tensor size",
                expected: theta.len(),
                actual: g.len(),
            });
        }
        for ((t, v), &gi) in theta.iter_mut().zip(vel.iter_mut()).zip(g.iter()) {
            *v = momentum * *v - lr * gi;
            *t += *v;
        }
    }
    state.step += 1;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    pub mean_loss: f64,
}

/// `epoch,phase,lr,mean_loss` with a header row.
pub fn trace_csv(trace: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,phase,lr,mean_loss\n");
    for r in trace {
        writeln!(out, "{},{},{},{}", r.epoch, r.phase, r.lr, r.mean_loss).unwrap();
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<EpochRecord>,
    pub state: OptimizerState,
}

/// Runs the full schedule. Items are reshuffled every epoch; an item with
/// several sentences contributes one, drawn uniformly, per epoch.
pub fn train<R: Rng + ?Sized>(
    corpus: &Corpus,
    table: &WordTable,
    mut params: ModelParams,
    cfg: &TrainConfig,
    obj_cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    obj_cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus { stage: "training" });
    }
    if let Some(item) = corpus.items.iter().find(|i| i.sentences.is_empty()) {
        return Err(Error::Structure(format!(
            "training item `{}` has no sentences",
            item.image_id
        )));
    }

    let mut state = OptimizerState::new(&params);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..corpus.len()).collect();

    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        let lr = cfg.lr_at(epoch);
        let phase = cfg.phase_at(epoch, obj_cfg);
        order.shuffle(rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let pairs: Vec<Pair<'_>> = chunk
                .iter()
                .map(|&i| {
                    let item = &corpus.items[i];
                    let s = if item.sentences.len() > 1 {
                        rng.random_range(0..item.sentences.len())
                    } else {
                        0
                    };
                    Pair::new(item, s)
                })
                .collect();
            let (value, grads) = objective_gradients(&params, table, &pairs, obj_cfg, phase.labels())?;
            if !value.total.is_finite() {
                return Err(Error::Diverged {
                    step: state.step,
                    epoch,
                    loss: value.total,
                });
            }
            sgd_step(&mut params, &grads, &mut state, lr, cfg.momentum)?;
            loss_sum += value.total;
            batches += 1;
        }
        let mean_loss = loss_sum / batches as f64;
        log::debug!("epoch {epoch} ({phase}, lr {lr}): mean loss {mean_loss}");
        trace.push(EpochRecord {
            epoch,
            phase,
            lr,
            mean_loss,
        });
    }

    if !params.is_finite() {
        return Err(Error::Diverged {
            step: state.step,
            epoch: cfg.epochs.saturating_sub(1),
            loss: f64::NAN,
        });
    }
    Ok(TrainOutcome { params, trace, state })
}
