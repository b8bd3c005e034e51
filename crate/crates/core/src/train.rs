//! Mini-batch training with Adam, validation-based early stopping, and
//! per-epoch attention-weight tracking.
//!
//! The loop is the single writer of the parameters. Per epoch it shuffles the
//! training set with a seed derived from (config seed, epoch), runs backward
//! and one Adam step per batch, evaluates on validation, and keeps the
//! best-scoring parameters. Sparse rows untouched by a batch keep stale Adam
//! moments (lazy update). Everything is deterministic given the config seed.

use std::time::Instant;

use crate::data::{batches, Dataset, Task};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{forward, Gradients, HyperParams, ModelKind, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMetric {
    LogLoss,
    Auc,
    Rmse,
}

impl EvalMetric {
    pub fn name(self) -> &'static str {
        match self {
            EvalMetric::LogLoss => "logloss",
            EvalMetric::Auc => "auc",
            EvalMetric::Rmse => "rmse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "logloss" => Ok(EvalMetric::LogLoss),
            "auc" => Ok(EvalMetric::Auc),
            "rmse" => Ok(EvalMetric::Rmse),
            other => Err(Error::Config(format!("unknown eval metric {other:?}"))),
        }
    }

    /// Natural default per task.
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Ctr => EvalMetric::LogLoss,
            Task::Regression => EvalMetric::Rmse,
        }
    }

    fn higher_is_better(self) -> bool {
        matches!(self, EvalMetric::Auc)
    }

    fn improves(self, candidate: f64, best: f64) -> bool {
        if self.higher_is_better() {
            candidate > best
        } else {
            candidate < best
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub hyper: HyperParams,
    pub task: Task,
    pub epochs_max: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub eval_metric: EvalMetric,
}

impl TrainConfig {
    /// Standard defaults: Adam(1e-3, 0.9, 0.999, 1e-8), batch 256,
    /// patience 3, 20 epochs.
    pub fn new(kind: ModelKind, hyper: HyperParams, task: Task) -> Self {
        TrainConfig {
            kind,
            hyper,
            task,
            epochs_max: 20,
            batch_size: 256,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            early_stop_patience: 3,
            seed: 42,
            eval_metric: EvalMetric::for_task(task),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.early_stop_patience < 1 {
            return Err(Error::Config("early_stop_patience must be >= 1".into()));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if self.task == Task::Regression && self.eval_metric != EvalMetric::Rmse {
            return Err(Error::Config(
                "regression training must select the rmse metric".into(),
            ));
        }
        if self.task == Task::Ctr && self.eval_metric == EvalMetric::Rmse {
            return Err(Error::Config(
                "ctr training selects logloss or auc, not rmse".into(),
            ));
        }
        Ok(())
    }
}

/// One epoch's record.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    /// Mean attention weights over the probe set; empty for kinds without
    /// attention.
    pub mean_alpha: Vec<f64>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

/// First and second Adam moments, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: ModelParams,
    v: ModelParams,
}

impl AdamState {
    pub fn zeros_like(params: &ModelParams, schema_dim: usize) -> Result<Self> {
        if params.num_indices() != schema_dim {
            return Err(Error::Config(format!(
                "adam state dimension {} does not match parameters {}",
                schema_dim,
                params.num_indices()
            )));
        }
        let mut zero = params.clone();
        let n = zero.flat_len();
        zero.assign_flat(&vec![0.0; n])?;
        Ok(AdamState {
            m: zero.clone(),
            v: zero,
        })
    }
}

/// One Adam update with bias correction at global step `t` (1-based).
/// Dense groups update fully; the sparse groups update only the rows present
/// in `grads`, so rows untouched by the batch keep stale moments.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    t: u64,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.flat_len() != state.m.flat_len() {
        return Err(Error::Config(format!(
            "adam state shape {} does not match parameters {}",
            state.m.flat_len(),
            params.flat_len()
        )));
    }
    let (b1, b2, lr, eps) = (cfg.beta1, cfg.beta2, cfg.learning_rate, cfg.epsilon);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    let update = |theta: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *theta -= lr * m_hat / (v_hat.sqrt() + eps);
    };

    update(
        &mut params.bias,
        grads.bias,
        &mut state.m.bias,
        &mut state.v.bias,
    );
    for (&i, &g) in &grads.linear {
        let i = i as usize;
        update(
            &mut params.linear[i],
            g,
            &mut state.m.linear[i],
            &mut state.v.linear[i],
        );
    }
    for (&i, row) in &grads.factors {
        let i = i as usize;
        let theta = params.factors.row_mut(i);
        let m = state.m.factors.row_mut(i);
        let v = state.v.factors.row_mut(i);
        for c in 0..row.len() {
            update(&mut theta[c], row[c], &mut m[c], &mut v[c]);
        }
    }
    for (l, gl) in grads.dense.iter().enumerate() {
        let pw = params.dense[l].weight.data_mut();
        let mw = state.m.dense[l].weight.data_mut();
        let vw = state.v.dense[l].weight.data_mut();
        for j in 0..pw.len() {
            update(&mut pw[j], gl.weight.data()[j], &mut mw[j], &mut vw[j]);
        }
        for j in 0..gl.bias.len() {
            update(
                &mut params.dense[l].bias[j],
                gl.bias[j],
                &mut state.m.dense[l].bias[j],
                &mut state.v.dense[l].bias[j],
            );
        }
    }
    let pw = params.attn_weight.data_mut();
    let mw = state.m.attn_weight.data_mut();
    let vw = state.v.attn_weight.data_mut();
    for j in 0..pw.len() {
        update(&mut pw[j], grads.attn_weight.data()[j], &mut mw[j], &mut vw[j]);
    }
    for j in 0..grads.attn_bias.len() {
        update(
            &mut params.attn_bias[j],
            grads.attn_bias[j],
            &mut state.m.attn_bias[j],
            &mut state.v.attn_bias[j],
        );
    }
    for j in 0..grads.attn_proj.len() {
        update(
            &mut params.attn_proj[j],
            grads.attn_proj[j],
            &mut state.m.attn_proj[j],
            &mut state.v.attn_proj[j],
        );
    }
    for j in 0..grads.readout.len() {
        update(
            &mut params.readout[j],
            grads.readout[j],
            &mut state.m.readout[j],
            &mut state.v.readout[j],
        );
    }
    for j in 0..grads.readout_concat.len() {
        update(
            &mut params.readout_concat[j],
            grads.readout_concat[j],
            &mut state.m.readout_concat[j],
            &mut state.v.readout_concat[j],
        );
    }
    Ok(())
}

/// Single read-only pass producing the task's metrics.
pub fn evaluate(
    params: &ModelParams,
    ds: &Dataset,
    task: Task,
    kind: ModelKind,
) -> Result<MetricsReport> {
    if ds.is_empty() {
        return Err(Error::Data("evaluate on an empty dataset".into()));
    }
    let mut preds = Vec::with_capacity(ds.len());
    for s in &ds.samples {
        preds.push(forward(params, s, kind, task)?.prediction);
    }
    let labels = ds.labels();
    Ok(match task {
        Task::Ctr => MetricsReport::ctr(&preds, &labels),
        Task::Regression => MetricsReport::regression(&preds, &labels),
    })
}

/// Probe subset used for the attention-weight trace: the first
/// min(512, |val|) validation samples.
const ALPHA_PROBE_SIZE: usize = 512;

fn probe_mean_alpha(
    params: &ModelParams,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if !cfg.kind.uses_attention() {
        return Ok(Vec::new());
    }
    let n = val.len().min(ALPHA_PROBE_SIZE);
    let mut mean = vec![0.0; cfg.hyper.depth];
    for s in &val.samples[..n] {
        let tr = forward(params, s, cfg.kind, cfg.task)?;
        for (m, a) in mean.iter_mut().zip(&tr.alpha) {
            *m += a;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    Ok(mean)
}

fn metric_value(report: &MetricsReport, metric: EvalMetric) -> Result<f64> {
    let v = match metric {
        EvalMetric::LogLoss => report.logloss,
        EvalMetric::Rmse => report.rmse,
        EvalMetric::Auc => {
            if report.auc_undefined {
                return Err(Error::Data(
                    "validation AUC undefined: only one class present".into(),
                ));
            }
            report.auc
        }
    };
    v.ok_or_else(|| Error::Data(format!("metric {} unavailable", metric.name())))
}

/// Trains on `train_ds`, selects on `val_ds`, and returns the best-scoring
/// parameters with the per-epoch history. Emits one tab-separated progress
/// line per epoch on stdout.
pub fn train(
    cfg: &TrainConfig,
    train_ds: &Dataset,
    val_ds: &Dataset,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(Error::Data("train and validation sets must be non-empty".into()));
    }
    if train_ds.schema.total_dim() != val_ds.schema.total_dim()
        || train_ds.schema.num_fields() != val_ds.schema.num_fields()
    {
        return Err(Error::SchemaMismatch(
            "train and validation sets use different schemas".into(),
        ));
    }
    if train_ds.task != cfg.task || val_ds.task != cfg.task {
        return Err(Error::Config(format!(
            "config task {} does not match dataset task {}",
            cfg.task.name(),
            train_ds.task.name()
        )));
    }

    let mut params = ModelParams::init(&train_ds.schema, &cfg.hyper, cfg.seed)?;
    let mut state = AdamState::zeros_like(&params, train_ds.schema.total_dim())?;
    let mut history = TrainHistory::default();
    let mut best_params = params.clone();
    let mut best_metric: Option<f64> = None;
    let mut epochs_since_best = 0usize;
    let mut t: u64 = 0;

    for epoch in 1..=cfg.epochs_max {
        let start = Instant::now();
        let epoch_seed = crate::rng::Rng::seed_from_pair(cfg.seed, epoch as u64).next_u64();
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (bi, batch) in batches(train_ds, cfg.batch_size, Some(epoch_seed))?.enumerate() {
            let (grads, batch_loss) = crate::model::backward(&params, &batch, cfg.kind, cfg.task)?;
            if !batch_loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch}, batch {bi}; parameter norm {:.6e}",
                    params.norm()
                )));
            }
            t += 1;
            adam_step(&mut params, &grads, &mut state, t, cfg)?;
            loss_sum += batch_loss * batch.len() as f64;
            seen += batch.len();
        }
        let train_loss = loss_sum / seen as f64;

        let report = evaluate(&params, val_ds, cfg.task, cfg.kind)?;
        let val_metric = metric_value(&report, cfg.eval_metric)?;
        let mean_alpha = probe_mean_alpha(&params, val_ds, cfg)?;
        let wall_ms = start.elapsed().as_millis() as u64;

        let alpha_cols = mean_alpha
            .iter()
            .map(|a| format!("\t{a}"))
            .collect::<String>();
        println!("{epoch}\t{train_loss}\t{val_metric}{alpha_cols}\t{wall_ms}");

        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_metric,
            mean_alpha,
            wall_ms,
        });

        let improved = match best_metric {
            None => true,
            Some(best) => cfg.eval_metric.improves(val_metric, best),
        };
        if improved {
            best_metric = Some(val_metric);
            best_params = params.clone();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }

    Ok((best_params, history))
}
