//! Loss, optimizers, the BPTT training loop and evaluation.

mod experiment;
mod grid;

pub use experiment::{profile_model, run_experiment, run_experiment_model, RunOutcome};
pub use grid::{
    expand_grid, grid_search, mean_std, rows_csv, summarize, summary_csv, write_atomic,
    write_rows_csv, write_summary_csv, CellSummary, GridCell, GridOptions, GridOutcome, RunRow,
};

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Role};
use crate::layers::Param;
use crate::model::{ForwardPass, Mode, Model};
use crate::tensor::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err("sgd|adam".into()),
        }
    }
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub optimizer: Optimizer,
    /// Evaluations without a val improvement before stopping, in epochs.
    pub early_stop_patience: usize,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 5e-4,
            epochs: 200,
            optimizer: Optimizer::Adam,
            early_stop_patience: 100,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Invalid(format!(
                "lr must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Invalid("weight_decay must be >= 0".into()));
        }
        if self.epochs == 0 || self.eval_every == 0 {
            return Err(Error::Invalid("epochs and eval_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Optimizer moments, one slot per parameter in [`Model::params_mut`] order.
pub struct OptimizerState {
    kind: Optimizer,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OptimizerState {
    pub fn new(kind: Optimizer, params: &[&Param]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            kind,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update with L2 weight decay added to the gradient.
    pub fn step(&mut self, params: Vec<&mut Param>, lr: f64, weight_decay: f64) {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for (i, p) in params.into_iter().enumerate() {
            let grad = p.grad.as_slice().to_vec();
            let value = p.value.as_mut_slice();
            match self.kind {
                Optimizer::Sgd => {
                    for (w, g) in value.iter_mut().zip(grad) {
                        *w -= lr * (g + weight_decay * *w);
                    }
                }
                Optimizer::Adam => {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for (j, (w, g)) in value.iter_mut().zip(grad).enumerate() {
                        let g = g + weight_decay * *w;
                        m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
                        v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        *w -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// Mean softmax cross-entropy over `nodes` and its gradient w.r.t. logits.
pub fn cross_entropy(
    logits: &DenseMatrix,
    labels: &[usize],
    nodes: &[usize],
) -> (f64, DenseMatrix) {
    let mut grad = DenseMatrix::zeros(logits.rows(), logits.cols());
    if nodes.is_empty() {
        return (0.0, grad);
    }
    let scale = 1.0 / nodes.len() as f64;
    let mut loss = 0.0;
    for &u in nodes {
        let row = logits.row(u);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[labels[u]];
        let g = grad.row_mut(u);
        for (c, v) in row.iter().enumerate() {
            g[c] = ((v - lse).exp() - if c == labels[u] { 1.0 } else { 0.0 }) * scale;
        }
    }
    (loss * scale, grad)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(logits: &DenseMatrix, labels: &[usize], nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::Invalid("accuracy over an empty node set".into()));
    }
    let hits = nodes
        .iter()
        .filter(|&&u| argmax(logits.row(u)) == labels[u])
        .count();
    Ok(hits as f64 / nodes.len() as f64)
}

/// Inference-mode accuracy over one split role.
pub fn evaluate(model: &mut Model, data: &Dataset, role: Role) -> Result<f64> {
    let x = model.prepare(data.features.values(), None)?;
    evaluate_prepared(model, &x, data, role)
}

pub fn evaluate_prepared(
    model: &mut Model,
    prepared: &DenseMatrix,
    data: &Dataset,
    role: Role,
) -> Result<f64> {
    let nodes = data.split.nodes(role);
    if nodes.is_empty() {
        return Err(Error::Invalid(format!("no {role} nodes to evaluate")));
    }
    let pass = model.forward(prepared, Mode::eval(), None)?;
    accuracy(&pass.logits, data.labels.labels(), &nodes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    /// `(epoch, accuracy)` at every evaluation.
    pub val_acc: Vec<(usize, f64)>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Accuracy of the best-val checkpoint on the test role.
    pub test_acc: f64,
    pub epochs_run: usize,
    pub wall_s: f64,
    pub seed: u64,
}

fn nan_diagnostic(epoch: usize, loss: f64, model: &Model, pass: &ForwardPass) -> String {
    let mut s = format!("epoch {epoch}: loss {loss}");
    for (layer, t) in model.layers.iter().zip(&pass.traces) {
        let max_i = t
            .currents
            .iter()
            .map(DenseMatrix::max_abs)
            .fold(0.0, f64::max);
        s.push_str(&format!(
            "; {} rate {:.4} max|I| {max_i:e}",
            layer.name, t.firing_rate
        ));
    }
    let max_w = model
        .params()
        .iter()
        .map(|p| p.value.max_abs())
        .fold(0.0, f64::max);
    s.push_str(&format!("; max|param| {max_w:e}"));
    s
}

/// Full-batch BPTT with best-val checkpointing and early stopping. On
/// return the model holds the best checkpoint.
pub fn train(model: &mut Model, data: &Dataset, tc: &TrainConfig) -> Result<TrainReport> {
    train_observed(model, data, tc, |_, _| {})
}

/// [`train`], handing every training-mode forward pass to `observe`.
pub fn train_observed(
    model: &mut Model,
    data: &Dataset,
    tc: &TrainConfig,
    mut observe: impl FnMut(usize, &ForwardPass),
) -> Result<TrainReport> {
    tc.validate()?;
    data.validate_split()?;
    let started = Instant::now();
    let prepared = model.prepare(data.features.values(), None)?;
    let labels = data.labels.labels();
    let train_nodes = data.split.nodes(Role::Train);
    if data.split.count(Role::Val) == 0 {
        return Err(Error::Invalid(
            "training needs a non-empty val split".into(),
        ));
    }
    let mut opt = OptimizerState::new(tc.optimizer, &model.params());
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_acc: Vec::new(),
        best_epoch: 0,
        best_val_acc: f64::NEG_INFINITY,
        test_acc: f64::NAN,
        epochs_run: 0,
        wall_s: 0.0,
        seed: model.config().seed,
    };
    let mut best_state = model.state();
    let mut since_best = 0;
    for epoch in 0..tc.epochs {
        model.zero_grad();
        let pass = model.forward(&prepared, Mode::train(epoch as u64), None)?;
        observe(epoch, &pass);
        let (loss, g) = cross_entropy(&pass.logits, labels, &train_nodes);
        if !loss.is_finite() {
            return Err(Error::NonFinite(nan_diagnostic(epoch, loss, model, &pass)));
        }
        model.backward(&pass, &g)?;
        drop(pass);
        opt.step(model.params_mut(), tc.lr, tc.weight_decay);
        if let Some(p) = model.params().iter().find(|p| !p.value.is_finite()) {
            return Err(Error::NonFinite(format!(
                "epoch {epoch}: parameter of shape {:?} became non-finite",
                p.value.shape()
            )));
        }
        report.train_loss.push(loss);
        report.epochs_run = epoch + 1;
        if (epoch + 1) % tc.eval_every == 0 || epoch + 1 == tc.epochs {
            let acc = evaluate_prepared(model, &prepared, data, Role::Val)?;
            report.val_acc.push((epoch, acc));
            if acc > report.best_val_acc {
                report.best_val_acc = acc;
                report.best_epoch = epoch;
                best_state = model.state();
                since_best = 0;
            } else {
                since_best += tc.eval_every;
                if since_best >= tc.early_stop_patience {
                    break;
                }
            }
        }
    }
    model.load_state(best_state)?;
    if data.split.count(Role::Test) > 0 {
        report.test_acc = evaluate_prepared(model, &prepared, data, Role::Test)?;
    }
    report.wall_s = started.elapsed().as_secs_f64();
    Ok(report)
}
