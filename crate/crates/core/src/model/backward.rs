//! Analytic reverse-mode gradients for every model kind.
//!
//! Gradients are the mean over the batch. The sparse groups (linear weights
//! and factor rows) are stored per touched index only, in sorted order, so
//! untouched rows provably receive exactly zero gradient. Accumulation walks
//! samples, fields, and layers in a fixed order; reruns are bit-identical.

use std::collections::BTreeMap;

use super::forward::{dlogit, forward, loss, ForwardTrace};
use super::{DenseLayer, ModelKind, ModelParams};
use crate::data::{Batch, Task};
use crate::error::{Error, Result};
use crate::features::SparseFields;
use crate::numerics::{matvec_transpose, Matrix};

/// Mean-over-batch gradients, same shapes as [`ModelParams`] with the two
/// sparse groups keyed by touched index.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub bias: f64,
    pub linear: BTreeMap<u32, f64>,
    pub factors: BTreeMap<u32, Vec<f64>>,
    pub dense: Vec<DenseLayer>,
    pub attn_weight: Matrix,
    pub attn_bias: Vec<f64>,
    pub attn_proj: Vec<f64>,
    pub readout: Vec<f64>,
    pub readout_concat: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            bias: 0.0,
            linear: BTreeMap::new(),
            factors: BTreeMap::new(),
            dense: params
                .dense
                .iter()
                .map(|l| DenseLayer {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            attn_weight: Matrix::zeros(params.attn_weight.rows(), params.attn_weight.cols()),
            attn_bias: vec![0.0; params.attn_bias.len()],
            attn_proj: vec![0.0; params.attn_proj.len()],
            readout: vec![0.0; params.readout.len()],
            readout_concat: vec![0.0; params.readout_concat.len()],
        }
    }

    fn factor_row(&mut self, idx: u32, k: usize) -> &mut Vec<f64> {
        self.factors.entry(idx).or_insert_with(|| vec![0.0; k])
    }

    fn scale(&mut self, s: f64) {
        self.bias *= s;
        for v in self.linear.values_mut() {
            *v *= s;
        }
        for row in self.factors.values_mut() {
            for v in row {
                *v *= s;
            }
        }
        for layer in &mut self.dense {
            for v in layer.weight.data_mut() {
                *v *= s;
            }
            for v in &mut layer.bias {
                *v *= s;
            }
        }
        for v in self.attn_weight.data_mut() {
            *v *= s;
        }
        for v in &mut self.attn_bias {
            *v *= s;
        }
        for v in &mut self.attn_proj {
            *v *= s;
        }
        for v in &mut self.readout {
            *v *= s;
        }
        for v in &mut self.readout_concat {
            *v *= s;
        }
    }

    /// Dense flat view in [`ModelParams`] order (untouched sparse rows are
    /// zeros); used by the finite-difference check.
    pub fn to_flat_dense(&self, params: &ModelParams) -> Vec<f64> {
        let k = params.embedding_dim();
        let mut out = Vec::with_capacity(params.flat_len());
        out.push(self.bias);
        let mut linear = vec![0.0; params.linear.len()];
        for (&i, &g) in &self.linear {
            linear[i as usize] = g;
        }
        out.extend_from_slice(&linear);
        let mut factors = vec![0.0; params.factors.data().len()];
        for (&i, row) in &self.factors {
            factors[i as usize * k..(i as usize + 1) * k].copy_from_slice(row);
        }
        out.extend_from_slice(&factors);
        for layer in &self.dense {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(&layer.bias);
        }
        out.extend_from_slice(self.attn_weight.data());
        out.extend_from_slice(&self.attn_bias);
        out.extend_from_slice(&self.attn_proj);
        out.extend_from_slice(&self.readout);
        out.extend_from_slice(&self.readout_concat);
        out
    }
}

/// Mean gradient of the loss over the batch, plus the mean loss itself.
pub fn backward(
    params: &ModelParams,
    batch: &Batch,
    kind: ModelKind,
    task: Task,
) -> Result<(Gradients, f64)> {
    if batch.is_empty() {
        return Err(Error::Config("backward over an empty batch".into()));
    }
    let mut grads = Gradients::zeros_like(params);
    let mut loss_sum = 0.0;
    for b in 0..batch.len() {
        let view = batch.sample(b);
        let trace = forward(params, &view, kind, task)?;
        let y = batch.label(b);
        loss_sum += loss(trace.prediction, y, task);
        let g = dlogit(trace.prediction, y, task);
        accumulate(params, &view, &trace, g, kind, &mut grads);
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    Ok((grads, loss_sum * inv))
}

fn accumulate<S: SparseFields>(
    params: &ModelParams,
    sample: &S,
    trace: &ForwardTrace,
    g: f64,
    kind: ModelKind,
    grads: &mut Gradients,
) {
    let k = params.embedding_dim();
    let width = params.hidden_dim();
    let depth = params.depth();

    if kind.uses_fm() {
        grads.bias += g;
        for f in 0..sample.num_fields() {
            for (idx, x) in sample.entries(f) {
                if x == 0.0 {
                    continue; // batch padding never touches a row
                }
                *grads.linear.entry(idx).or_insert(0.0) += g * x;
                if kind.uses_pairwise() {
                    let vrow = params.factors.row(idx as usize);
                    let grow = grads.factor_row(idx, k);
                    for c in 0..k {
                        // d/dv of the fast pairwise form
                        grow[c] += g * (x * trace.factor_sums[c] - vrow[c] * x * x);
                    }
                }
            }
        }
    }

    if !kind.uses_dense() {
        return;
    }

    // dL/dH_k, filled top-down
    let mut d_hidden: Vec<Vec<f64>> = (0..depth).map(|_| vec![0.0; width]).collect();

    match kind {
        ModelKind::Dnn | ModelKind::DeepFm => {
            let h_last = &trace.hidden[depth - 1];
            for ((gr, dh), (q, h)) in grads
                .readout
                .iter_mut()
                .zip(&mut d_hidden[depth - 1])
                .zip(params.readout.iter().zip(h_last))
            {
                *gr += g * h;
                *dh += g * q;
            }
        }
        ModelKind::DenseFm => {
            for (layer, h) in trace.hidden.iter().enumerate() {
                let span = layer * width..(layer + 1) * width;
                let q = &params.readout_concat[span.clone()];
                let gq = &mut grads.readout_concat[span];
                for i in 0..width {
                    gq[i] += g * h[i];
                    d_hidden[layer][i] += g * q[i];
                }
            }
        }
        ModelKind::AdnFm => {
            // readout and pooled vector
            let mut d_pooled = vec![0.0; width];
            for i in 0..width {
                grads.readout[i] += g * trace.pooled[i];
                d_pooled[i] = g * params.readout[i];
            }
            // alpha and the hidden layers it mixes
            let mut d_alpha = vec![0.0; depth];
            for layer in 0..depth {
                let h = &trace.hidden[layer];
                let mut acc = 0.0;
                for i in 0..width {
                    acc += d_pooled[i] * h[i];
                    d_hidden[layer][i] += trace.alpha[layer] * d_pooled[i];
                }
                d_alpha[layer] = acc;
            }
            // softmax backward
            let mut mix = 0.0;
            for layer in 0..depth {
                mix += trace.alpha[layer] * d_alpha[layer];
            }
            for layer in 0..depth {
                let d_score = trace.alpha[layer] * (d_alpha[layer] - mix);
                if d_score == 0.0 {
                    continue;
                }
                let act = &trace.attn_hidden[layer];
                let pre = &trace.attn_pre[layer];
                let e = params.attn_proj.len();
                // score = <proj, act>
                let mut d_act = vec![0.0; e];
                for i in 0..e {
                    grads.attn_proj[i] += d_score * act[i];
                    d_act[i] = d_score * params.attn_proj[i];
                }
                // through the attention ReLU and affine
                let h = &trace.hidden[layer];
                for i in 0..e {
                    if pre[i] <= 0.0 {
                        continue;
                    }
                    let da = d_act[i];
                    grads.attn_bias[i] += da;
                    let wrow = grads.attn_weight.row_mut(i);
                    for j in 0..width {
                        wrow[j] += da * h[j];
                    }
                    let prow = params.attn_weight.row(i);
                    for j in 0..width {
                        d_hidden[layer][j] += da * prow[j];
                    }
                }
            }
        }
        _ => unreachable!(),
    }

    // dense stack, top layer down; layer 0 consumes the embeddings
    let mut d_input_next: Option<Vec<f64>> = None;
    for layer in (0..depth).rev() {
        let mut dh = std::mem::take(&mut d_hidden[layer]);
        if let Some(extra) = d_input_next.take() {
            for (a, b) in dh.iter_mut().zip(&extra) {
                *a += b;
            }
        }
        let pre = &trace.pre_acts[layer];
        for (d, z) in dh.iter_mut().zip(pre) {
            if *z <= 0.0 {
                *d = 0.0;
            }
        }
        let input = if layer == 0 {
            &trace.h0
        } else {
            &trace.hidden[layer - 1]
        };
        let gl = &mut grads.dense[layer];
        for i in 0..width {
            let di = dh[i];
            if di == 0.0 {
                continue;
            }
            gl.bias[i] += di;
            let wrow = gl.weight.row_mut(i);
            for (w, x) in wrow.iter_mut().zip(input) {
                *w += di * x;
            }
        }
        let d_input = matvec_transpose(&params.dense[layer].weight, &dh)
            .expect("dense shapes fixed at init");
        d_input_next = Some(d_input);
    }

    // embeddings back to touched factor rows
    let d_h0 = d_input_next.expect("depth >= 1");
    for f in 0..sample.num_fields() {
        let dcol = &d_h0[f * k..(f + 1) * k];
        for (idx, x) in sample.entries(f) {
            if x == 0.0 {
                continue; // batch padding
            }
            let grow = grads.factor_row(idx, k);
            for c in 0..k {
                grow[c] += dcol[c] * x;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{batches, synth_interactions, Dataset};
    use crate::numerics::grad_check;
    use std::sync::Arc;

    fn take_batch(ds: &Dataset, n: usize) -> Batch {
        batches(ds, n, None).unwrap().next().unwrap()
    }

    fn mean_loss(params: &ModelParams, batch: &Batch, kind: ModelKind, task: Task) -> f64 {
        let mut sum = 0.0;
        for b in 0..batch.len() {
            let tr = forward(params, &batch.sample(b), kind, task).unwrap();
            sum += loss(tr.prediction, batch.label(b), task);
        }
        sum / batch.len() as f64
    }

    #[test]
    fn gradients_match_central_differences_for_all_kinds() {
        let (mut ds, _) = synth_interactions(4, 4, 3, 2, 21).unwrap();
        // regression labels off the {0,1} grid
        let mut regression = ds.clone();
        regression.task = Task::Regression;
        for (i, s) in regression.samples.iter_mut().enumerate() {
            s.label = 0.3 * i as f64 - 0.4;
        }
        ds.task = Task::Ctr;

        let hyper = super::super::HyperParams {
            embedding_dim: 3,
            hidden_dim: 5,
            depth: 2,
            attn_dim: 4,
        };
        for task_ds in [&ds, &regression] {
            let batch = take_batch(task_ds, 4);
            for kind in ModelKind::ALL {
                // a generic point: init leaves several groups near zero, where
                // central differences drown in rounding noise
                let mut params = ModelParams::init(&task_ds.schema, &hyper, 99).unwrap();
                let mut rng = crate::rng::Rng::seed_from(1);
                let mut flat = params.to_flat();
                for v in &mut flat {
                    *v = 0.25 * rng.normal();
                }
                params.assign_flat(&flat).unwrap();
                let (grads, _) = backward(&params, &batch, kind, task_ds.task).unwrap();
                let analytic = grads.to_flat_dense(&params);
                let theta = params.to_flat();
                let shape = params.clone();
                let report = grad_check(
                    |flat| {
                        let mut p = shape.clone();
                        p.assign_flat(flat).unwrap();
                        mean_loss(&p, &batch, kind, task_ds.task)
                    },
                    &theta,
                    &analytic,
                    1e-5,
                    1e-4,
                    |i| shape.param_name(i),
                )
                .unwrap();
                assert!(
                    report.max_rel_err < 1e-4,
                    "{} {:?}: {} at {:?} (analytic {}, numeric {})",
                    kind.name(),
                    task_ds.task,
                    report.max_rel_err,
                    report.failing_param,
                    report.worst_analytic,
                    report.worst_numeric,
                );
            }
        }
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let (ds, _) = synth_interactions(8, 3, 4, 2, 5).unwrap();
        let hyper = super::super::HyperParams {
            embedding_dim: 2,
            hidden_dim: 4,
            depth: 2,
            attn_dim: 3,
        };
        let params = ModelParams::init(&ds.schema, &hyper, 3).unwrap();
        let single = take_batch(&ds, 8);
        let mut doubled_samples = ds.samples.clone();
        doubled_samples.extend(ds.samples.iter().cloned());
        let doubled_ds = Dataset {
            samples: doubled_samples,
            schema: Arc::clone(&ds.schema),
            task: ds.task,
        };
        let doubled = take_batch(&doubled_ds, 16);
        let (g1, l1) = backward(&params, &single, ModelKind::AdnFm, Task::Ctr).unwrap();
        let (g2, l2) = backward(&params, &doubled, ModelKind::AdnFm, Task::Ctr).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        let a = g1.to_flat_dense(&params);
        let b = g2.to_flat_dense(&params);
        for (x, y) in a.iter().zip(&b) {
            assert!(
                (x - y).abs() <= 1e-13 * x.abs().max(y.abs()).max(1.0),
                "{x} vs {y}"
            );
        }
    }

    #[test]
    fn untouched_rows_get_no_gradient() {
        let (ds, _) = synth_interactions(6, 3, 8, 2, 13).unwrap();
        let hyper = super::super::HyperParams {
            embedding_dim: 2,
            hidden_dim: 4,
            depth: 2,
            attn_dim: 3,
        };
        let params = ModelParams::init(&ds.schema, &hyper, 1).unwrap();
        let batch = take_batch(&ds, 6);
        let (grads, _) = backward(&params, &batch, ModelKind::AdnFm, Task::Ctr).unwrap();
        let mut active = std::collections::BTreeSet::new();
        for s in &ds.samples {
            for (i, _) in s.all_entries() {
                active.insert(i);
            }
        }
        for &i in grads.linear.keys() {
            assert!(active.contains(&i));
        }
        for &i in grads.factors.keys() {
            assert!(active.contains(&i));
        }
        // plenty of rows exist beyond the touched set
        assert!(active.len() < params.num_indices());
    }

    #[test]
    fn padding_rows_change_nothing() {
        // a batch mixing 1-entry and 3-entry multi fields pads the short
        // rows; forward through the padded view must match the raw sample
        let (ds, _) = synth_interactions(5, 3, 4, 2, 2).unwrap();
        let mut samples = ds.samples.clone();
        let spec_offset = ds.schema.field(1).offset as u32;
        samples[0] = {
            let mut fields: Vec<Vec<(u32, f64)>> = (0..3)
                .map(|f| samples[0].field_entries(f).to_vec())
                .collect();
            fields[1] = vec![
                (spec_offset + 1, 0.5),
                (spec_offset + 2, 0.25),
                (spec_offset + 3, 0.25),
            ];
            crate::features::EncodedSample::new(fields, samples[0].label)
        };
        let ds = Dataset {
            samples,
            schema: Arc::clone(&ds.schema),
            task: ds.task,
        };
        let hyper = super::super::HyperParams {
            embedding_dim: 2,
            hidden_dim: 4,
            depth: 2,
            attn_dim: 3,
        };
        let params = ModelParams::init(&ds.schema, &hyper, 8).unwrap();
        let batch = take_batch(&ds, ds.len());
        for (b, s) in ds.samples.iter().enumerate() {
            let via_batch = forward(&params, &batch.sample(b), ModelKind::AdnFm, Task::Ctr)
                .unwrap()
                .prediction;
            let direct = forward(&params, s, ModelKind::AdnFm, Task::Ctr)
                .unwrap()
                .prediction;
            assert_eq!(via_batch.to_bits(), direct.to_bits());
        }
    }
}
