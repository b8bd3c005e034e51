//! Forward passes for every model kind.
//!
//! The logit is always `y_fm + y_deep` where each kind defines its two
//! halves: LR uses bias + linear only; FM adds the pairwise factor term;
//! DNN reads the last hidden layer through the readout; DeepFM is FM plus
//! that readout; DenseFM is FM plus a linear readout over the concatenated
//! hidden layers; the full model is FM plus attention-weighted pooling over
//! the hidden layers.

use super::{ModelKind, ModelParams};
use crate::data::Task;
use crate::error::{Error, Result};
use crate::features::SparseFields;
use crate::metrics::PROB_CLAMP;
use crate::numerics::{affine, dot, relu, sigmoid, softmax};

/// Everything a forward pass produced, retained for backward and
/// diagnostics. Vectors not used by a kind stay empty.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Concatenated field embeddings, field-major, length F*K.
    pub h0: Vec<f64>,
    /// Per-factor weighted sums over active entries, length K.
    pub factor_sums: Vec<f64>,
    /// Dense pre-activations, one vector of width d per layer.
    pub pre_acts: Vec<Vec<f64>>,
    /// Hidden layers H_1..H_L after ReLU.
    pub hidden: Vec<Vec<f64>>,
    /// Attention pre-activations per layer (width e).
    pub attn_pre: Vec<Vec<f64>>,
    /// Attention hidden activations per layer (width e).
    pub attn_hidden: Vec<Vec<f64>>,
    /// Raw attention scores, one per layer.
    pub attn_scores: Vec<f64>,
    /// Softmax-normalized attention weights, one per layer.
    pub alpha: Vec<f64>,
    /// Attention-weighted sum of hidden layers (width d).
    pub pooled: Vec<f64>,
    pub y_fm: f64,
    pub y_deep: f64,
    pub logit: f64,
    pub prediction: f64,
}

/// Concatenated field embeddings: column i is the weight-summed factor rows
/// active in field i. Field-major layout, so the result is also H_0.
pub fn embed<S: SparseFields>(params: &ModelParams, sample: &S) -> Result<Vec<f64>> {
    let k = params.embedding_dim();
    let num_fields = sample.num_fields();
    let d_total = params.num_indices();
    let mut h0 = vec![0.0; num_fields * k];
    for f in 0..num_fields {
        let col = &mut h0[f * k..(f + 1) * k];
        for (idx, x) in sample.entries(f) {
            let idx = idx as usize;
            if idx >= d_total {
                return Err(Error::SchemaMismatch(format!(
                    "sparse index {idx} out of range (D = {d_total})"
                )));
            }
            for (c, v) in col.iter_mut().zip(params.factors.row(idx)) {
                *c += v * x;
            }
        }
    }
    Ok(h0)
}

/// Bias + linear + pairwise factor score over all active entries, computed
/// in the O(K * nnz) form: 1/2 * sum_c [ (sum_l v_lc x_l)^2 - sum_l v_lc^2 x_l^2 ].
pub fn fm_forward<S: SparseFields>(params: &ModelParams, sample: &S) -> Result<f64> {
    let (y, _) = fm_with_sums(params, sample, true)?;
    Ok(y)
}

fn fm_with_sums<S: SparseFields>(
    params: &ModelParams,
    sample: &S,
    pairwise: bool,
) -> Result<(f64, Vec<f64>)> {
    let k = params.embedding_dim();
    let d_total = params.num_indices();
    let mut linear = 0.0;
    let mut sums = vec![0.0; if pairwise { k } else { 0 }];
    let mut square_sums = vec![0.0; if pairwise { k } else { 0 }];
    for f in 0..sample.num_fields() {
        for (idx, x) in sample.entries(f) {
            let idx = idx as usize;
            if idx >= d_total {
                return Err(Error::SchemaMismatch(format!(
                    "sparse index {idx} out of range (D = {d_total})"
                )));
            }
            linear += params.linear[idx] * x;
            if pairwise {
                let row = params.factors.row(idx);
                for c in 0..k {
                    let vx = row[c] * x;
                    sums[c] += vx;
                    square_sums[c] += vx * vx;
                }
            }
        }
    }
    let mut y = params.bias + linear;
    if pairwise {
        let mut inter = 0.0;
        for c in 0..k {
            inter += sums[c] * sums[c] - square_sums[c];
        }
        y += 0.5 * inter;
    }
    Ok((y, sums))
}

/// Dense stack + attention + weighted pooling over H_1..H_L, given the
/// concatenated embeddings. Returns the deep logit and the full trace pieces.
pub fn adn_forward(params: &ModelParams, h0: &[f64]) -> Result<(f64, ForwardTrace)> {
    let mut trace = empty_trace();
    trace.h0 = h0.to_vec();
    run_dense(params, &mut trace)?;
    run_attention(params, &mut trace, 0.0)?;
    let y = dot(&params.readout, &trace.pooled);
    trace.y_deep = y;
    Ok((y, trace))
}

fn empty_trace() -> ForwardTrace {
    ForwardTrace {
        h0: Vec::new(),
        factor_sums: Vec::new(),
        pre_acts: Vec::new(),
        hidden: Vec::new(),
        attn_pre: Vec::new(),
        attn_hidden: Vec::new(),
        attn_scores: Vec::new(),
        alpha: Vec::new(),
        pooled: Vec::new(),
        y_fm: 0.0,
        y_deep: 0.0,
        logit: 0.0,
        prediction: 0.0,
    }
}

fn run_dense(params: &ModelParams, trace: &mut ForwardTrace) -> Result<()> {
    let mut input = trace.h0.clone();
    for layer in &params.dense {
        let z = affine(&layer.weight, &input, &layer.bias)?;
        let h = relu(&z);
        trace.pre_acts.push(z);
        input = h.clone();
        trace.hidden.push(h);
    }
    Ok(())
}

fn run_attention(params: &ModelParams, trace: &mut ForwardTrace, score_shift: f64) -> Result<()> {
    let depth = trace.hidden.len();
    let mut scores = Vec::with_capacity(depth);
    for h in &trace.hidden {
        let pre = affine(&params.attn_weight, h, &params.attn_bias)?;
        let act = relu(&pre);
        scores.push(dot(&params.attn_proj, &act) + score_shift);
        trace.attn_pre.push(pre);
        trace.attn_hidden.push(act);
    }
    let alpha = softmax(&scores)?;
    let width = params.hidden_dim();
    let mut pooled = vec![0.0; width];
    for (a, h) in alpha.iter().zip(&trace.hidden) {
        for (p, v) in pooled.iter_mut().zip(h) {
            *p += a * v;
        }
    }
    trace.attn_scores = scores;
    trace.alpha = alpha;
    trace.pooled = pooled;
    Ok(())
}

/// Full forward pass for any kind.
pub fn forward<S: SparseFields>(
    params: &ModelParams,
    sample: &S,
    kind: ModelKind,
    task: Task,
) -> Result<ForwardTrace> {
    forward_with_shift(params, sample, kind, task, 0.0)
}

/// Forward pass with a constant added to every attention score before the
/// softmax; a test hook for the shift-invariance property. Zero shift is the
/// ordinary forward pass.
pub fn forward_with_shift<S: SparseFields>(
    params: &ModelParams,
    sample: &S,
    kind: ModelKind,
    task: Task,
    score_shift: f64,
) -> Result<ForwardTrace> {
    let mut trace = empty_trace();

    if kind.uses_fm() {
        let (y, sums) = fm_with_sums(params, sample, kind.uses_pairwise())?;
        trace.y_fm = y;
        trace.factor_sums = sums;
    }

    if kind.uses_dense() {
        trace.h0 = embed(params, sample)?;
        run_dense(params, &mut trace)?;
        trace.y_deep = match kind {
            ModelKind::Dnn | ModelKind::DeepFm => {
                dot(&params.readout, trace.hidden.last().unwrap())
            }
            ModelKind::DenseFm => {
                let width = params.hidden_dim();
                let mut y = 0.0;
                for (k, h) in trace.hidden.iter().enumerate() {
                    y += dot(&params.readout_concat[k * width..(k + 1) * width], h);
                }
                y
            }
            ModelKind::AdnFm => {
                run_attention(params, &mut trace, score_shift)?;
                dot(&params.readout, &trace.pooled)
            }
            _ => unreachable!(),
        };
    }

    trace.logit = trace.y_fm + trace.y_deep;
    trace.prediction = match task {
        Task::Ctr => sigmoid(trace.logit),
        Task::Regression => trace.logit,
    };
    Ok(trace)
}

/// The full model's prediction (FM plus attention-pooled dense component).
pub fn predict<S: SparseFields>(
    params: &ModelParams,
    sample: &S,
    task: Task,
) -> Result<ForwardTrace> {
    forward(params, sample, ModelKind::AdnFm, task)
}

/// Prediction under any baseline kind (or the full model).
pub fn baseline_forward<S: SparseFields>(
    params: &ModelParams,
    sample: &S,
    kind: ModelKind,
    task: Task,
) -> Result<ForwardTrace> {
    forward(params, sample, kind, task)
}

/// Per-sample loss: cross-entropy with the prediction clamped to
/// `[1e-7, 1 - 1e-7]` for CTR, squared error for regression.
pub fn loss(p: f64, y: f64, task: Task) -> f64 {
    match task {
        Task::Ctr => {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
        }
        Task::Regression => (p - y) * (p - y),
    }
}

/// d loss / d logit for one sample, consistent with [`loss`] including the
/// clamp (the loss is flat in the clamped region, so the gradient there is
/// exactly zero).
pub fn dlogit(p: f64, y: f64, task: Task) -> f64 {
    match task {
        Task::Ctr => {
            if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
                p - y
            } else {
                0.0
            }
        }
        Task::Regression => 2.0 * (p - y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_interactions;
    use crate::features::{EncodedSample, FeatureSchema, FieldKind, FieldSpec};
    use crate::model::HyperParams;
    use crate::rng::Rng;
    use std::sync::Arc;

    fn plain_schema(fields: usize, vocab: usize) -> Arc<FeatureSchema> {
        let specs = (0..fields)
            .map(|i| FieldSpec {
                name: format!("f{i}"),
                kind: FieldKind::Categorical,
                offset: i * (vocab + 1),
                cardinality: vocab + 1,
                vocab: (0..vocab).map(|v| format!("v{v}")).collect(),
            })
            .collect();
        Arc::new(FeatureSchema::from_fields(specs).unwrap())
    }

    fn unit_sample(schema: &FeatureSchema, locals: &[usize]) -> EncodedSample {
        let fields = locals
            .iter()
            .enumerate()
            .map(|(f, &v)| vec![((schema.field(f).offset + v) as u32, 1.0)])
            .collect();
        EncodedSample::new(fields, 1.0)
    }

    fn tiny_hyper() -> HyperParams {
        HyperParams {
            embedding_dim: 2,
            hidden_dim: 4,
            depth: 2,
            attn_dim: 3,
        }
    }

    #[test]
    fn embed_single_field_is_the_factor_row() {
        let schema = plain_schema(2, 3);
        let hyper = tiny_hyper();
        let mut params = ModelParams::zeros(&schema, &hyper).unwrap();
        params.factors.row_mut(1).copy_from_slice(&[0.5, -2.0]);
        let s = unit_sample(&schema, &[1, 0]);
        let h0 = embed(&params, &s).unwrap();
        assert_eq!(&h0[..2], &[0.5, -2.0]);
        assert_eq!(&h0[2..], &[0.0, 0.0]);
    }

    #[test]
    fn embed_weighted_sum_by_hand() {
        // two active rows at weight 0.5 each: column = (r1 + r2) / 2
        let schema = plain_schema(1, 4);
        let hyper = tiny_hyper();
        let mut params = ModelParams::zeros(&schema, &hyper).unwrap();
        params.factors.row_mut(1).copy_from_slice(&[1.0, 3.0]);
        params.factors.row_mut(2).copy_from_slice(&[5.0, -1.0]);
        let s = EncodedSample::new(vec![vec![(1, 0.5), (2, 0.5)]], 0.0);
        let h0 = embed(&params, &s).unwrap();
        assert_eq!(h0, vec![3.0, 1.0]);
    }

    #[test]
    fn embed_rejects_out_of_range_index() {
        let schema = plain_schema(1, 2);
        let params = ModelParams::zeros(&schema, &tiny_hyper()).unwrap();
        let s = EncodedSample::new(vec![vec![(99, 1.0)]], 0.0);
        assert!(matches!(
            embed(&params, &s),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn fm_pairwise_by_hand() {
        // v1=(1,0), v2=(0,1), v3=(1,1): pairwise inner products sum to 2
        let schema = plain_schema(3, 1);
        let hyper = tiny_hyper();
        let mut params = ModelParams::zeros(&schema, &hyper).unwrap();
        params.factors.row_mut(1).copy_from_slice(&[1.0, 0.0]);
        params.factors.row_mut(3).copy_from_slice(&[0.0, 1.0]);
        params.factors.row_mut(5).copy_from_slice(&[1.0, 1.0]);
        let s = unit_sample(&schema, &[1, 1, 1]);
        let y = fm_forward(&params, &s).unwrap();
        assert!((y - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fm_single_feature_has_no_pairs() {
        let schema = plain_schema(1, 2);
        let hyper = tiny_hyper();
        let mut params = ModelParams::zeros(&schema, &hyper).unwrap();
        params.factors.row_mut(1).copy_from_slice(&[3.0, -4.0]);
        let s = unit_sample(&schema, &[1]);
        assert_eq!(fm_forward(&params, &s).unwrap(), 0.0);
    }

    #[test]
    fn fm_linear_only() {
        let schema = plain_schema(1, 2);
        let mut params = ModelParams::zeros(&schema, &tiny_hyper()).unwrap();
        params.bias = 1.5;
        params.linear[1] = 2.0;
        let s = unit_sample(&schema, &[1]);
        assert_eq!(fm_forward(&params, &s).unwrap(), 3.5);
    }

    #[test]
    fn fm_fast_form_matches_pairwise_double_loop() {
        let schema = plain_schema(4, 5);
        let hyper = HyperParams {
            embedding_dim: 3,
            ..tiny_hyper()
        };
        let mut rng = Rng::seed_from(17);
        for _ in 0..100 {
            let mut params = ModelParams::init(&schema, &hyper, rng.next_u64()).unwrap();
            for v in params.factors.data_mut() {
                *v = rng.normal();
            }
            for w in params.linear.iter_mut() {
                *w = rng.normal();
            }
            params.bias = rng.normal();
            // multi-valued first field exercises within-field pairs
            let s = EncodedSample::new(
                vec![
                    vec![(1, 0.5), (3, 0.5)],
                    vec![(7 + rng.below(5) as u32, 1.0)],
                    vec![(13 + rng.below(5) as u32, 1.0)],
                    vec![(19 + rng.below(5) as u32, 1.0)],
                ],
                1.0,
            );
            let fast = fm_forward(&params, &s).unwrap();
            // oracle: naive double loop over all active pairs
            let entries: Vec<(usize, f64)> = s
                .all_entries()
                .map(|(i, x)| (i as usize, x))
                .collect();
            let mut naive = params.bias;
            for &(i, x) in &entries {
                naive += params.linear[i] * x;
            }
            for a in 0..entries.len() {
                for b in (a + 1)..entries.len() {
                    let (i, xi) = entries[a];
                    let (j, xj) = entries[b];
                    naive += dot(params.factors.row(i), params.factors.row(j)) * xi * xj;
                }
            }
            assert!(
                (fast - naive).abs() < 1e-10,
                "fast {fast} vs naive {naive}"
            );
        }
    }

    #[test]
    fn adn_depth_one_ignores_attention() {
        let schema = plain_schema(2, 3);
        let hyper = HyperParams {
            depth: 1,
            ..tiny_hyper()
        };
        let params = ModelParams::init(&schema, &hyper, 5).unwrap();
        let s = unit_sample(&schema, &[1, 2]);
        let tr = forward(&params, &s, ModelKind::AdnFm, Task::Ctr).unwrap();
        assert_eq!(tr.alpha, vec![1.0]);

        // attention parameters are provably inert at depth 1
        let mut perturbed = params.clone();
        for v in perturbed.attn_weight.data_mut() {
            *v += 3.0;
        }
        for v in perturbed.attn_bias.iter_mut() {
            *v -= 1.0;
        }
        for v in perturbed.attn_proj.iter_mut() {
            *v *= -2.0;
        }
        let tr2 = forward(&perturbed, &s, ModelKind::AdnFm, Task::Ctr).unwrap();
        assert_eq!(tr.prediction, tr2.prediction);
    }

    #[test]
    fn zero_proj_gives_uniform_attention() {
        let schema = plain_schema(2, 3);
        let hyper = HyperParams {
            depth: 3,
            ..tiny_hyper()
        };
        let mut params = ModelParams::init(&schema, &hyper, 5).unwrap();
        for v in params.attn_proj.iter_mut() {
            *v = 0.0;
        }
        let s = unit_sample(&schema, &[1, 2]);
        let tr = forward(&params, &s, ModelKind::AdnFm, Task::Ctr).unwrap();
        for a in tr.alpha {
            assert!((a - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_readout_zeroes_deep_output() {
        let schema = plain_schema(2, 3);
        let mut params = ModelParams::init(&schema, &tiny_hyper(), 5).unwrap();
        for v in params.readout.iter_mut() {
            *v = 0.0;
        }
        let s = unit_sample(&schema, &[1, 2]);
        let tr = forward(&params, &s, ModelKind::AdnFm, Task::Ctr).unwrap();
        assert_eq!(tr.y_deep, 0.0);
    }

    #[test]
    fn prediction_heads() {
        let schema = plain_schema(2, 3);
        let params = ModelParams::zeros(&schema, &tiny_hyper()).unwrap();
        let s = unit_sample(&schema, &[1, 2]);
        // zero params: logit 0, CTR prediction exactly 0.5
        for kind in ModelKind::ALL {
            let tr = forward(&params, &s, kind, Task::Ctr).unwrap();
            assert_eq!(tr.prediction, 0.5, "{}", kind.name());
        }
        // regression head is the identity
        let mut params = params;
        params.bias = 1.5;
        let tr = forward(&params, &s, ModelKind::AdnFm, Task::Regression).unwrap();
        assert_eq!(tr.prediction, 1.5);
    }

    #[test]
    fn deepfm_with_zero_readout_reduces_to_fm() {
        let (ds, _) = synth_interactions(20, 3, 5, 2, 9).unwrap();
        let hyper = tiny_hyper();
        let mut params = ModelParams::init(&ds.schema, &hyper, 2).unwrap();
        for v in params.readout.iter_mut() {
            *v = 0.0;
        }
        for s in &ds.samples {
            let deep = forward(&params, s, ModelKind::DeepFm, Task::Ctr).unwrap();
            let fm = forward(&params, s, ModelKind::Fm, Task::Ctr).unwrap();
            assert_eq!(deep.prediction, fm.prediction);
        }
    }

    #[test]
    fn densefm_depth_one_equals_full_model() {
        // with one hidden layer, attention is a softmax over a single score,
        // so the full model and the concat head coincide when q_cat = q
        let (ds, _) = synth_interactions(20, 3, 5, 2, 9).unwrap();
        let hyper = HyperParams {
            depth: 1,
            ..tiny_hyper()
        };
        let mut params = ModelParams::init(&ds.schema, &hyper, 4).unwrap();
        params.readout_concat = params.readout.clone();
        for s in &ds.samples {
            let a = forward(&params, s, ModelKind::AdnFm, Task::Ctr).unwrap();
            let b = forward(&params, s, ModelKind::DenseFm, Task::Ctr).unwrap();
            assert!((a.prediction - b.prediction).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss(0.5, 1.0, Task::Ctr), std::f64::consts::LN_2);
        assert_eq!(loss(0.5, 0.0, Task::Ctr), std::f64::consts::LN_2);
        let near = loss(1.0 - 1e-7, 1.0, Task::Ctr);
        assert!(near > 0.0 && near < 2e-7);
        assert_eq!(loss(2.0, 5.0, Task::Regression), 9.0);
    }
}
