//! Training loop with early stopping, evaluation and stratified k-fold
//! cross-validation.

use std::collections::BTreeMap;
use std::time::Instant;

use log::{debug, info, warn};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, mean_std, roc_auc};
use crate::autodiff::{adam_step, AdamConfig, Tape, Var};
use crate::error::{CocnError, Result};
use crate::graph::{Dataset, Task};
use crate::model::{Model, ModelConfig, PreparedGraph, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub folds: usize,
    /// Share of each training split held out for early stopping.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 1e-4,
            max_epochs: 200,
            early_stop_patience: 100,
            batch_size: 4,
            seed: 0,
            folds: 10,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CocnError::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.weight_decay < 0.0 {
            return fail("lr must be positive and weight_decay non-negative".into());
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.folds == 0 {
            return fail("max_epochs, batch_size and folds must be positive".into());
        }
        if self.early_stop_patience == 0 || self.early_stop_patience > self.max_epochs {
            return fail(format!(
                "early_stop_patience must lie in [1, max_epochs = {}], got {}",
                self.max_epochs, self.early_stop_patience
            ));
        }
        if !(0.0..0.5).contains(&self.val_fraction) {
            return fail(format!(
                "val_fraction must lie in [0, 0.5), got {}",
                self.val_fraction
            ));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// One supervised example: a whole graph, or one node of a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Item {
    Graph(usize),
    Node { graph: usize, node: usize },
}

impl Item {
    /// Graph the item belongs to.
    pub fn graph(self) -> usize {
        match self {
            Item::Graph(g) | Item::Node { graph: g, .. } => g,
        }
    }
}

/// Every labelled item of the dataset with its label.
pub fn labelled_items(data: &Dataset) -> Result<Vec<(Item, usize)>> {
    let mut out = Vec::new();
    for (gi, g) in data.graphs.iter().enumerate() {
        match data.task {
            Task::GraphClassification => {
                let y = g.graph_label().ok_or_else(|| {
                    CocnError::Integrity(format!("graph {gi} has no graph label"))
                })?;
                out.push((Item::Graph(gi), y));
            }
            Task::NodeClassification => {
                let ys = g.node_labels().ok_or_else(|| {
                    CocnError::Integrity(format!("graph {gi} has no node labels"))
                })?;
                out.extend(
                    ys.iter()
                        .enumerate()
                        .map(|(v, &y)| (Item::Node { graph: gi, node: v }, y)),
                );
            }
            Task::IsomorphismPairs => {
                return Err(CocnError::Config(
                    "isomorphism datasets are not trained".into(),
                ))
            }
        }
    }
    Ok(out)
}

/// Items sharing one forward pass.
#[derive(Debug, Clone)]
struct Unit {
    graph: usize,
    nodes: Option<Vec<usize>>,
    labels: Vec<usize>,
}

fn make_units(cfg: &ModelConfig, items: &[(Item, usize)]) -> Vec<Unit> {
    let mut graph_units = Vec::new();
    let mut by_graph: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for &(item, y) in items {
        match item {
            Item::Graph(g) => graph_units.push(Unit {
                graph: g,
                nodes: None,
                labels: vec![y],
            }),
            Item::Node { graph, node } => {
                let e = by_graph.entry(graph).or_default();
                e.0.push(node);
                e.1.push(y);
            }
        }
    }
    let chunk = if cfg.variant == Variant::Segment {
        cfg.segment_batch_nb
    } else {
        usize::MAX
    };
    for (graph, (nodes, labels)) in by_graph {
        for (ns, ls) in nodes.chunks(chunk).zip(labels.chunks(chunk)) {
            graph_units.push(Unit {
                graph,
                nodes: Some(ns.to_vec()),
                labels: ls.to_vec(),
            });
        }
    }
    graph_units
}

fn unit_logits(
    model: &Model,
    tape: &mut Tape,
    b: &crate::model::Bound,
    prep: &PreparedGraph,
    unit: &Unit,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let segment = model.cfg.variant == Variant::Segment;
    match (&unit.nodes, segment) {
        (None, false) => Ok(model.forward_graph(tape, b, prep, dropout)?.logits),
        (None, true) => {
            let batches = model.segment_batches(prep)?;
            model.segment_graph_forward(tape, b, &batches, dropout)
        }
        (Some(nodes), false) => {
            let all = model.forward_node(tape, b, prep, dropout)?;
            tape.gather_rows(all, nodes)
        }
        (Some(nodes), true) => {
            let batches = model.segment_batches_for(prep, nodes)?;
            let mut dropout = dropout;
            let mut parts = Vec::with_capacity(batches.len());
            for batch in &batches {
                parts.push(model.segment_forward(tape, b, batch, dropout.as_deref_mut())?);
            }
            if parts.len() == 1 {
                Ok(parts[0])
            } else {
                tape.concat_rows(&parts)
            }
        }
    }
}

/// Mean loss of a logits block: sigmoid cross-entropy for a single logit
/// column, softmax cross-entropy otherwise.
pub fn task_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    if tape.shape(logits).1 == 1 {
        let targets: Vec<f64> = labels.iter().map(|&y| y as f64).collect();
        tape.bce_with_logits(logits, &targets)
    } else {
        tape.cross_entropy(logits, labels)
    }
}

struct UnitResult {
    loss: f64,
    grads: Option<Vec<Array2<f64>>>,
    logits: Array2<f64>,
}

fn run_unit(
    model: &Model,
    prep: &PreparedGraph,
    unit: &Unit,
    weight: f64,
    train: Option<u64>,
) -> Result<UnitResult> {
    let mut tape = Tape::new();
    let b = model.bind(&mut tape);
    let mut rng = train.map(ChaCha8Rng::seed_from_u64);
    let logits = unit_logits(model, &mut tape, &b, prep, unit, rng.as_mut())?;
    let loss = task_loss(&mut tape, logits, &unit.labels)?;
    let scaled = tape.scale(loss, weight);
    let value = tape.scalar(scaled);
    let logit_values = tape.value(logits).clone();
    let grads = if train.is_some() && value.is_finite() {
        tape.backward(scaled)?;
        Some(
            b.vars
                .iter()
                .zip(&model.params)
                .map(|(&v, p)| {
                    tape.grad(v)
                        .cloned()
                        .unwrap_or_else(|| Array2::zeros(p.value.dim()))
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(UnitResult {
        loss: value,
        grads,
        logits: logit_values,
    })
}

/// Early stopping on a monitored loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    bad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            bad: 0,
        }
    }

    pub fn update(&mut self, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.bad = 0;
            StopDecision::Improved
        } else {
            self.bad += 1;
            if self.bad >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Loss, accuracy and (binary only) AUC over a set of items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

pub fn evaluate(
    model: &Model,
    preps: &[PreparedGraph],
    items: &[(Item, usize)],
) -> Result<Evaluation> {
    let units = make_units(&model.cfg, items);
    let total: usize = units.iter().map(|u| u.labels.len()).sum();
    let results: Vec<UnitResult> = units
        .par_iter()
        .map(|u| {
            let w = u.labels.len() as f64 / total.max(1) as f64;
            run_unit(model, &preps[u.graph], u, w, None)
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(total);
    let mut scores = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for (u, r) in units.iter().zip(&results) {
        loss += r.loss;
        for (row, &y) in r.logits.rows().into_iter().zip(&u.labels) {
            let pred = if row.len() == 1 {
                usize::from(row[0] > 0.0)
            } else {
                row.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
                    )
                    .0
            };
            predictions.push(pred);
            scores.push(if row.len() == 1 {
                row[0]
            } else {
                row[1] - row[0]
            });
            labels.push(y);
        }
    }
    let auc = if model.cfg.num_classes == 2 {
        let pos: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
        roc_auc(&scores, &pos)
    } else {
        None
    };
    Ok(Evaluation {
        loss,
        accuracy: accuracy(&predictions, &labels),
        auc,
        predictions,
        labels,
    })
}

fn snapshot(model: &Model) -> Vec<Array2<f64>> {
    model.params.iter().map(|p| p.value.clone()).collect()
}

fn restore(model: &mut Model, values: &[Array2<f64>]) {
    for (p, v) in model.params.iter_mut().zip(values) {
        p.value.assign(v);
    }
}

/// Trains `model` in place. Early stopping watches the validation loss, or
/// the training loss when `val` is empty, and the best parameters are
/// restored at the end. A non-finite loss restores the best parameters seen
/// so far and returns [`CocnError::Diverged`].
pub fn train_model(
    model: &mut Model,
    preps: &[PreparedGraph],
    train: &[(Item, usize)],
    val: &[(Item, usize)],
    tcfg: &TrainConfig,
) -> Result<TrainHistory> {
    tcfg.validate()?;
    if train.is_empty() {
        return Err(CocnError::Config("empty training split".into()));
    }
    let adam = tcfg.adam();
    let mut units = make_units(&model.cfg, train);
    let mut shuffle = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut stopper = EarlyStopping::new(tcfg.early_stop_patience);
    let mut best = snapshot(model);
    let mut hist = TrainHistory::default();
    for epoch in 0..tcfg.max_epochs {
        let start = Instant::now();
        units.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for (step, batch) in units.chunks(tcfg.batch_size).enumerate() {
            let total: usize = batch.iter().map(|u| u.labels.len()).sum();
            let base = tcfg
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(((epoch as u64) << 32) + ((step as u64) << 12));
            let results: Vec<UnitResult> = batch
                .par_iter()
                .enumerate()
                .map(|(i, u)| {
                    let w = u.labels.len() as f64 / total as f64;
                    run_unit(model, &preps[u.graph], u, w, Some(base + i as u64))
                })
                .collect::<Result<_>>()?;
            let loss: f64 = results.iter().map(|r| r.loss).sum();
            if !loss.is_finite() {
                warn!("non-finite loss at epoch {epoch}; restoring the best parameters");
                restore(model, &best);
                return Err(CocnError::Diverged { epoch });
            }
            model.zero_grads();
            for r in &results {
                if let Some(gs) = &r.grads {
                    for (p, g) in model.params.iter_mut().zip(gs) {
                        p.grad += g;
                    }
                }
            }
            adam_step(&mut model.params, &adam);
            epoch_loss += loss * total as f64;
            seen += total;
        }
        hist.train_loss.push(epoch_loss / seen as f64);
        let monitored = if val.is_empty() {
            *hist.train_loss.last().expect("pushed")
        } else {
            let v = evaluate(model, preps, val)?.loss;
            hist.val_loss.push(v);
            v
        };
        hist.epoch_seconds.push(start.elapsed().as_secs_f64());
        debug!(
            "epoch {epoch}: train {:.5} monitored {monitored:.5}",
            hist.train_loss[epoch]
        );
        if !monitored.is_finite() {
            restore(model, &best);
            return Err(CocnError::Diverged { epoch });
        }
        match stopper.update(monitored) {
            StopDecision::Improved => {
                best = snapshot(model);
                hist.best_epoch = epoch;
            }
            StopDecision::Continue => {}
            StopDecision::Stop => {
                hist.stopped_early = true;
                break;
            }
        }
    }
    restore(model, &best);
    Ok(hist)
}

/// Deals the indices of each class round-robin into `k` folds after a
/// seeded shuffle. Folds are disjoint and cover every index.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        for &i in idx.iter() {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

/// Splits `idx` into (rest, held-out) with about `fraction` of every class
/// held out.
fn stratified_holdout(
    idx: &[usize],
    labels: &[usize],
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    if fraction <= 0.0 {
        return (idx.to_vec(), Vec::new());
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in idx {
        by_class.entry(labels[i]).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut rest, mut held) = (Vec::new(), Vec::new());
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        let take = ((members.len() as f64 * fraction).round() as usize).min(members.len() - 1);
        held.extend_from_slice(&members[..take]);
        rest.extend_from_slice(&members[take..]);
    }
    rest.sort_unstable();
    held.sort_unstable();
    (rest, held)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub test_loss: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub mean_epoch_seconds: f64,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub folds: Vec<FoldReport>,
    pub accuracy_mean: f64,
    /// Population standard deviation over folds.
    pub accuracy_std: f64,
    pub auc_mean: Option<f64>,
    pub auc_std: Option<f64>,
}

impl MetricsReport {
    pub fn from_folds(folds: Vec<FoldReport>) -> Self {
        let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let (accuracy_mean, accuracy_std) = mean_std(&accs);
        let aucs: Option<Vec<f64>> = folds.iter().map(|f| f.auc).collect();
        let (auc_mean, auc_std) = match aucs {
            Some(a) if !a.is_empty() => {
                let (m, s) = mean_std(&a);
                (Some(m), Some(s))
            }
            _ => (None, None),
        };
        MetricsReport {
            folds,
            accuracy_mean,
            accuracy_std,
            auc_mean,
            auc_std,
        }
    }
}

/// Precomputes the per-graph operators for a dataset.
pub fn prepare_dataset(cfg: &ModelConfig, data: &Dataset) -> Result<Vec<PreparedGraph>> {
    let probe = Model::new(cfg.clone(), 0)?;
    data.graphs.par_iter().map(|g| probe.prepare(g)).collect()
}

/// k-fold cross-validation (a single stratified holdout when `folds == 1`).
/// Folds run in parallel; the report is ordered by fold index. Each fold's
/// trained model is returned alongside.
pub fn cross_validate(
    data: &Dataset,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<(MetricsReport, Vec<Model>)> {
    tcfg.validate()?;
    mcfg.validate()?;
    if mcfg.task != data.task {
        return Err(CocnError::Config(format!(
            "model task {:?} does not match dataset task {:?}",
            mcfg.task, data.task
        )));
    }
    if mcfg.num_classes != data.num_classes {
        return Err(CocnError::Config(format!(
            "model has {} classes, dataset has {}",
            mcfg.num_classes, data.num_classes
        )));
    }
    let items = labelled_items(data)?;
    let labels: Vec<usize> = items.iter().map(|&(_, y)| y).collect();
    let preps = prepare_dataset(mcfg, data)?;
    let all: Vec<usize> = (0..items.len()).collect();
    let splits: Vec<(Vec<usize>, Vec<usize>)> = if tcfg.folds == 1 {
        let (rest, test) = stratified_holdout(&all, &labels, 0.1, tcfg.seed ^ 0x7E57);
        vec![(rest, test)]
    } else {
        if items.len() < tcfg.folds {
            return Err(CocnError::Config(format!(
                "{} items cannot fill {} folds",
                items.len(),
                tcfg.folds
            )));
        }
        let folds = stratified_folds(&labels, tcfg.folds, tcfg.seed);
        (0..tcfg.folds)
            .map(|f| {
                let rest = folds
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != f)
                    .flat_map(|(_, v)| v.iter().copied())
                    .collect();
                (rest, folds[f].clone())
            })
            .collect()
    };
    let pick = |idx: &[usize]| -> Vec<(Item, usize)> { idx.iter().map(|&i| items[i]).collect() };
    let results: Vec<(FoldReport, Model)> = splits
        .par_iter()
        .enumerate()
        .map(|(f, (rest, test))| {
            let fold_seed = tcfg.seed.wrapping_add(f as u64);
            let (train, val) =
                stratified_holdout(rest, &labels, tcfg.val_fraction, fold_seed ^ 0xA11);
            let mut model = Model::new(mcfg.clone(), fold_seed)?;
            let fold_cfg = TrainConfig {
                seed: fold_seed,
                ..tcfg.clone()
            };
            let history = train_model(&mut model, &preps, &pick(&train), &pick(&val), &fold_cfg)?;
            let eval = evaluate(&model, &preps, &pick(test))?;
            info!(
                "fold {f}: accuracy {:.4} after {} epochs",
                eval.accuracy,
                history.train_loss.len()
            );
            let (mean_secs, _) = mean_std(&history.epoch_seconds);
            Ok((
                FoldReport {
                    fold: f,
                    train_size: train.len(),
                    val_size: val.len(),
                    test_size: test.len(),
                    accuracy: eval.accuracy,
                    auc: eval.auc,
                    test_loss: eval.loss,
                    epochs_run: history.train_loss.len(),
                    best_epoch: history.best_epoch,
                    mean_epoch_seconds: mean_secs,
                    history,
                },
                model,
            ))
        })
        .collect::<Result<_>>()?;
    let (reports, models) = results.into_iter().unzip();
    Ok((MetricsReport::from_folds(reports), models))
}
