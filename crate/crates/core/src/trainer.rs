//! Metrics, the training loop, grid selection and checkpoint evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Adam, Tape};
use crate::encoders::{encode_instance, fit_encoders, EncoderError, EncoderSpec, TableCache};
use crate::graph::{build_graph, GraphError, GraphOptions, HeteroGraph};
use crate::ingest::RelationalInstance;
use crate::models::{read_checkpoint, write_checkpoint, Batch, BatchTargets, HeadSpec, MaskTarget, Model, ModelConfig, ModelError, Variant};
use crate::sampler::{batch_rng, sample, SampleError, SampledSubgraph, SamplerConfig, Seed};
use crate::task::{Split, TaskKind, Targets, TrainingTable};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("class index {index} outside 0..{n_classes}")]
    BadClassIndex { index: usize, n_classes: usize },
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{split} metric: {source}")]
    Metric { split: &'static str, source: MetricError },
    #[error("bad run config: {0}")]
    BadConfig(String),
    #[error("target table {0} is not in the instance")]
    UnknownTarget(String),
    #[error("split {0} is empty")]
    EmptySplit(&'static str),
}

type Result<T> = std::result::Result<T, TrainError>;

/// Mann-Whitney AUC: the chance a random positive outscores a random
/// negative, ties counted one half.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> std::result::Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Tied groups share their average rank (1-based).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Unweighted mean of per-class F1. A class with no true, false positive or
/// false negative counts scores 0.
pub fn macro_f1(predictions: &[usize], labels: &[usize], n_classes: usize) -> std::result::Result<f64, MetricError> {
    if predictions.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: predictions.len(),
            labels: labels.len(),
        });
    }
    if n_classes == 0 {
        return Err(MetricError::BadClassIndex { index: 0, n_classes });
    }
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        for &k in &[p, l] {
            if k >= n_classes {
                return Err(MetricError::BadClassIndex { index: k, n_classes });
            }
        }
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let total: f64 = (0..n_classes)
        .map(|c| {
            let d = 2 * tp[c] + fp[c] + fn_[c];
            if d == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / d as f64
            }
        })
        .sum();
    Ok(total / n_classes as f64)
}

/// Coefficient of determination clamped to `[0, 1]`.
pub fn r2_score(pred: &[f64], truth: &[f64]) -> f64 {
    let n = truth.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, y)| (p - y).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { 0.0 };
    }
    (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
}

pub fn metric_name(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::BinaryClassification => "auc_roc",
        TaskKind::MulticlassClassification => "macro_f1",
        TaskKind::Regression => "r2",
        TaskKind::MaskPretrain => "mask_accuracy",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub lr: f64,
    pub min_epochs: usize,
    pub min_steps: usize,
    /// Epochs without validation improvement tolerated after the minima.
    pub patience: usize,
    /// Hard cap on epochs per grid point.
    pub max_epochs: usize,
    pub grid_fanouts: Vec<usize>,
    pub grid_layers: Vec<usize>,
    pub seed: u64,
    pub disjoint: bool,
    pub strict: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            batch_size: 512,
            lr: 1e-3,
            min_epochs: 10,
            min_steps: 1000,
            patience: 3,
            max_epochs: 2000,
            grid_fanouts: vec![16, 32, 64],
            grid_layers: vec![1, 2, 3, 4],
            seed: 0,
            disjoint: false,
            strict: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::BadConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.max_epochs == 0 || self.max_epochs < self.min_epochs {
            return bad("max_epochs must be positive and at least min_epochs");
        }
        if self.model.variant != Variant::TabularOnly && (self.grid_fanouts.is_empty() || self.grid_layers.is_empty()) {
            return bad("grid must be non-empty");
        }
        if self.grid_fanouts.contains(&0) {
            return bad("fanouts must be positive");
        }
        if self.grid_layers.iter().any(|l| !(1..=4).contains(l)) {
            return bad("layers must lie in 1..=4");
        }
        Ok(())
    }

    /// Grid points as `(fanout, n_layers)`. The tabular baseline has one.
    pub fn grid(&self) -> Vec<(usize, usize)> {
        if self.model.variant == Variant::TabularOnly {
            return vec![(self.model.fanout, self.model.n_layers)];
        }
        let mut g = Vec::new();
        for &l in &self.grid_layers {
            for &f in &self.grid_fanouts {
                g.push((f, l));
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub fanout: usize,
    pub n_layers: usize,
    pub val: f64,
    pub test: f64,
    pub best_epoch: usize,
    pub steps: usize,
    pub epochs: usize,
    /// Mean training loss over the train split before the first update.
    pub initial_train_loss: f64,
    /// Same quantity for the selected snapshot.
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    pub task: TaskKind,
    pub metric: String,
    pub val: f64,
    pub test: f64,
    pub best: PointReport,
    pub grid: Vec<PointReport>,
    pub wall_time_secs: f64,
    pub seed: u64,
}

impl RunReport {
    /// The report with timing zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> RunReport {
        RunReport {
            wall_time_secs: 0.0,
            ..self.clone()
        }
    }
}

/// Graph, fitted encoders and cached encodings shared by all grid points.
pub struct Prepared<'a> {
    pub instance: &'a RelationalInstance,
    pub training: &'a TrainingTable,
    pub graph: HeteroGraph,
    pub encoder: EncoderSpec,
    pub caches: Vec<TableCache>,
    pub head: HeadSpec,
    pub target_type: usize,
}

pub fn head_for(training: &TrainingTable, encoder: &EncoderSpec) -> Result<HeadSpec> {
    Ok(match (&training.kind, &training.targets) {
        (TaskKind::BinaryClassification, _) => HeadSpec::Binary,
        (TaskKind::MulticlassClassification, _) => HeadSpec::Multiclass {
            n_classes: training.n_classes(),
        },
        (TaskKind::Regression, Targets::Regression(y)) => {
            let train: Vec<f64> = training.rows_in(Split::Train).iter().map(|&i| y[i]).collect();
            if train.is_empty() {
                return Err(TrainError::EmptySplit("train"));
            }
            let mean = train.iter().sum::<f64>() / train.len() as f64;
            let var = train.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / train.len() as f64;
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            HeadSpec::Regression { mean, std }
        }
        (TaskKind::MaskPretrain, _) => HeadSpec::mask_for(encoder, &training.target_table),
        _ => return Err(TrainError::BadConfig("targets do not match the task kind".into())),
    })
}

pub fn prepare<'a>(instance: &'a RelationalInstance, training: &'a TrainingTable, d0: usize, options: &GraphOptions) -> Result<Prepared<'a>> {
    let graph = build_graph(instance, options)?;
    let target_type = graph
        .node_type_index(&training.target_table)
        .ok_or_else(|| TrainError::UnknownTarget(training.target_table.clone()))?;
    let encoder = fit_encoders(instance, training, d0)?;
    let caches = encode_instance(&encoder, instance)?;
    let head = head_for(training, &encoder)?;
    Ok(Prepared {
        instance,
        training,
        graph,
        encoder,
        caches,
        head,
        target_type,
    })
}

impl Prepared<'_> {
    fn seeds(&self, idx: &[usize]) -> (Vec<Seed>, Option<Vec<i64>>) {
        let seeds = idx
            .iter()
            .map(|&i| Seed {
                node_type: self.target_type,
                node: self.training.entity_rows[i],
            })
            .collect();
        let times = self.training.timestamps.as_ref().map(|t| idx.iter().map(|&i| t[i]).collect());
        (seeds, times)
    }

    fn subgraph(&self, idx: &[usize], cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<SampledSubgraph> {
        let (seeds, times) = self.seeds(idx);
        let sub = sample(&self.graph, &seeds, times.as_deref(), cfg, rng)?;
        debug_assert!(sub.causality_violations(&self.graph, cfg.strict).is_empty());
        Ok(sub)
    }

    fn targets(&self, idx: &[usize]) -> BatchTargets {
        match &self.training.targets {
            Targets::Classes { labels, .. } => match self.training.kind {
                TaskKind::BinaryClassification => BatchTargets::Binary(idx.iter().map(|&i| labels[i] as f64).collect()),
                _ => BatchTargets::Multiclass(idx.iter().map(|&i| labels[i]).collect()),
            },
            Targets::Regression(y) => BatchTargets::Regression(idx.iter().map(|&i| y[i]).collect()),
            Targets::Masked(m) => BatchTargets::Mask(idx.iter().map(|&i| m[i].clone()).collect()),
        }
    }
}

const EVAL_STREAM: u64 = 0x00e7_a1e7_a1e7_a100;

fn sampler_config(cfg: &RunConfig, model: &ModelConfig) -> SamplerConfig {
    SamplerConfig {
        fanouts: model.fanouts(),
        disjoint: cfg.disjoint,
        strict: cfg.strict,
    }
}

/// Task metric of `model` on the given training-table rows.
pub fn score_rows(prep: &Prepared, model: &Model, cfg: &RunConfig, idx: &[usize], split: &'static str) -> Result<f64> {
    if idx.is_empty() {
        return Err(TrainError::EmptySplit(split));
    }
    let scfg = sampler_config(cfg, &model.config);
    let metric_err = |source| TrainError::Metric { split, source };
    if let Targets::Masked(cells) = &prep.training.targets {
        let (mut hit, mut n_cat, mut sq, mut n_num) = (0usize, 0usize, 0.0, 0usize);
        for (b, chunk) in idx.chunks(cfg.batch_size).enumerate() {
            let sub = prep.subgraph(chunk, &scfg, &mut batch_rng(cfg.seed ^ EVAL_STREAM, b as u64))?;
            let batch = Batch {
                graph: &prep.graph,
                caches: &prep.caches,
                sub: &sub,
            };
            let c: Vec<_> = chunk.iter().map(|&i| cells[i].clone()).collect();
            for (_, pred, target) in model.predict_masked(&batch, &c)? {
                match (pred, target) {
                    (MaskTarget::Class(p), MaskTarget::Class(t)) => {
                        n_cat += 1;
                        hit += usize::from(p == t);
                    }
                    (MaskTarget::Value(p), MaskTarget::Value(t)) => {
                        n_num += 1;
                        sq += (p - t).powi(2);
                    }
                    _ => {}
                }
            }
        }
        return Ok(if n_cat > 0 {
            hit as f64 / n_cat as f64
        } else if n_num > 0 {
            (1.0 - sq / n_num as f64).clamp(0.0, 1.0)
        } else {
            0.0
        });
    }
    let mut preds = Vec::with_capacity(idx.len());
    for (b, chunk) in idx.chunks(cfg.batch_size).enumerate() {
        let sub = prep.subgraph(chunk, &scfg, &mut batch_rng(cfg.seed ^ EVAL_STREAM, b as u64))?;
        preds.extend(model.predict(&Batch {
            graph: &prep.graph,
            caches: &prep.caches,
            sub: &sub,
        })?);
    }
    match &prep.training.targets {
        Targets::Classes { labels, .. } => {
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            if prep.training.kind == TaskKind::BinaryClassification {
                let y: Vec<bool> = y.iter().map(|&l| l == 1).collect();
                auc_roc(&preds, &y).map_err(metric_err)
            } else {
                let p: Vec<usize> = preds.iter().map(|&p| p as usize).collect();
                macro_f1(&p, &y, prep.training.n_classes()).map_err(metric_err)
            }
        }
        Targets::Regression(y) => {
            let y: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            Ok(r2_score(&preds, &y))
        }
        Targets::Masked(_) => unreachable!(),
    }
}

/// Mean loss over `idx`, weighted by batch size.
pub fn mean_loss(prep: &Prepared, model: &Model, cfg: &RunConfig, idx: &[usize]) -> Result<f64> {
    let scfg = sampler_config(cfg, &model.config);
    let mut total = 0.0;
    for (b, chunk) in idx.chunks(cfg.batch_size).enumerate() {
        let sub = prep.subgraph(chunk, &scfg, &mut batch_rng(cfg.seed ^ EVAL_STREAM, b as u64))?;
        let mut tape = Tape::new();
        let l = model.loss(
            &mut tape,
            &Batch {
                graph: &prep.graph,
                caches: &prep.caches,
                sub: &sub,
            },
            &prep.targets(chunk),
        )?;
        total += tape.value(l).data[0] * chunk.len() as f64;
    }
    Ok(total / idx.len().max(1) as f64)
}

/// Trains one grid point. Runs at least `min_epochs` epochs and
/// `min_steps` steps, then stops after `patience` epochs without a
/// validation gain; the best-validation snapshot is returned.
pub fn train_point(prep: &Prepared, cfg: &RunConfig, model_cfg: ModelConfig) -> Result<(Model, PointReport, u64)> {
    let train_idx = prep.training.rows_in(Split::Train);
    let val_idx = prep.training.rows_in(Split::Val);
    let test_idx = prep.training.rows_in(Split::Test);
    if train_idx.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    let mut model = Model::new(model_cfg, prep.encoder.clone(), prep.head.clone(), &prep.graph, cfg.seed)?;
    let scfg = sampler_config(cfg, &model.config);
    let mut adam = Adam::new(&model.params, cfg.lr);
    let initial_train_loss = mean_loss(prep, &model, cfg, &train_idx)?;

    let mut order = train_idx.clone();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut steps, mut epochs) = (0usize, 0usize);
    let mut best: Option<(f64, usize, Model, u64)> = None;
    let mut since_best = 0;
    while epochs < cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let sub = prep.subgraph(chunk, &scfg, &mut batch_rng(cfg.seed, steps as u64))?;
            let batch = Batch {
                graph: &prep.graph,
                caches: &prep.caches,
                sub: &sub,
            };
            let mut tape = Tape::new();
            let loss = model.loss(&mut tape, &batch, &prep.targets(chunk))?;
            let grads = tape.backward(loss, &model.params);
            adam.update(&mut model.params, &grads).map_err(ModelError::from)?;
            steps += 1;
        }
        epochs += 1;
        let val = score_rows(prep, &model, cfg, &val_idx, "val")?;
        if best.as_ref().is_none_or(|b| val > b.0) {
            best = Some((val, epochs, model.clone(), adam.step));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if epochs >= cfg.min_epochs && steps >= cfg.min_steps && since_best >= cfg.patience {
            break;
        }
    }
    let (val, best_epoch, model, step) = best.expect("at least one epoch");
    let test = score_rows(prep, &model, cfg, &test_idx, "test")?;
    let final_train_loss = mean_loss(prep, &model, cfg, &train_idx)?;
    let report = PointReport {
        fanout: model.config.fanout,
        n_layers: model.config.n_layers,
        val,
        test,
        best_epoch,
        steps,
        epochs,
        initial_train_loss,
        final_train_loss,
    };
    Ok((model, report, step))
}

pub struct TrainOutcome {
    pub report: RunReport,
    pub model: Model,
    /// Serialized checkpoint of the selected grid point.
    pub checkpoint: Vec<u8>,
}

/// Trains every grid point, selects the best by validation metric (first
/// wins on ties) and checkpoints it.
pub fn train(prep: &Prepared, cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let points: Vec<ModelConfig> = cfg
        .grid()
        .into_iter()
        .map(|(fanout, n_layers)| ModelConfig {
            fanout,
            n_layers,
            ..cfg.model.clone()
        })
        .collect();
    let results: Vec<Result<(Model, PointReport, u64)>> = points.into_par_iter().map(|m| train_point(prep, cfg, m)).collect();
    let mut grid: Vec<PointReport> = Vec::new();
    let mut best: Option<(usize, Model, u64)> = None;
    for r in results {
        let (model, point, step) = r?;
        if best.as_ref().is_none_or(|(i, _, _)| point.val > grid[*i].val) {
            best = Some((grid.len(), model, step));
        }
        grid.push(point);
    }
    let (bi, model, step) = best.expect("grid is non-empty");
    let chosen = grid[bi].clone();
    let run = serde_json::json!({
        "config": cfg,
        "task": prep.training.kind,
        "target_table": prep.training.target_table,
        "selected": {"fanout": chosen.fanout, "n_layers": chosen.n_layers},
    });
    let mut checkpoint = Vec::new();
    write_checkpoint(&model, run, step, &mut checkpoint)?;
    let report = RunReport {
        variant: cfg.model.variant,
        task: prep.training.kind,
        metric: metric_name(prep.training.kind).to_string(),
        val: chosen.val,
        test: chosen.test,
        best: chosen,
        grid,
        wall_time_secs: start.elapsed().as_secs_f64(),
        seed: cfg.seed,
    };
    Ok(TrainOutcome {
        report,
        model,
        checkpoint,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

/// Recomputes split metrics from checkpoint bytes against a prepared
/// dataset. The checkpoint's encoders replace the freshly fitted ones.
pub fn evaluate(checkpoint: &[u8], instance: &RelationalInstance, training: &TrainingTable, options: &GraphOptions) -> Result<EvalReport> {
    let (model, run, _) = read_checkpoint(&mut &checkpoint[..])?;
    let cfg: RunConfig = serde_json::from_value(run["config"].clone()).map_err(|e| TrainError::BadConfig(e.to_string()))?;
    let graph = build_graph(instance, options)?;
    let target_type = graph
        .node_type_index(&training.target_table)
        .ok_or_else(|| TrainError::UnknownTarget(training.target_table.clone()))?;
    let caches = encode_instance(&model.encoder, instance)?;
    let prep = Prepared {
        instance,
        training,
        graph,
        encoder: model.encoder.clone(),
        caches,
        head: model.head.clone(),
        target_type,
    };
    let score = |s: Split| score_rows(&prep, &model, &cfg, &training.rows_in(s), s.name());
    Ok(EvalReport {
        metric: metric_name(training.kind).to_string(),
        train: score(Split::Train)?,
        val: score(Split::Val)?,
        test: score(Split::Test)?,
    })
}
