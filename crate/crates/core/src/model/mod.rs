//! Learnable architectures: the factorization machine, the attention-pooled
//! dense network, the joint model, the DenseFM ablation, and the LR / DNN /
//! DeepFM baselines. Forward passes and exact analytic backward passes.
//!
//! All kinds share one parameter store. The factor table doubles as the
//! embedding table (one row per sparse index, shared between the pairwise
//! term and the dense stack), and each kind reads only its own subset:
//! unused groups keep zero gradients and never move during training.

mod backward;
mod forward;

pub use backward::{backward, Gradients};
pub use forward::{
    adn_forward, baseline_forward, dlogit, embed, fm_forward, forward, forward_with_shift, loss,
    predict, ForwardTrace,
};

use crate::error::{Error, Result};
use crate::features::FeatureSchema;
use crate::numerics::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Lr,
    Fm,
    Dnn,
    DeepFm,
    DenseFm,
    AdnFm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Lr,
        ModelKind::Fm,
        ModelKind::Dnn,
        ModelKind::DeepFm,
        ModelKind::DenseFm,
        ModelKind::AdnFm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::Fm => "fm",
            ModelKind::Dnn => "dnn",
            ModelKind::DeepFm => "deepfm",
            ModelKind::DenseFm => "densefm",
            ModelKind::AdnFm => "adnfm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?}")))
    }

    /// Whether the logit includes the bias + linear + pairwise terms.
    pub fn uses_fm(self) -> bool {
        !matches!(self, ModelKind::Dnn)
    }

    /// Whether the pairwise factor term is part of the logit.
    pub fn uses_pairwise(self) -> bool {
        matches!(
            self,
            ModelKind::Fm | ModelKind::DeepFm | ModelKind::DenseFm | ModelKind::AdnFm
        )
    }

    pub fn uses_dense(self) -> bool {
        matches!(
            self,
            ModelKind::Dnn | ModelKind::DeepFm | ModelKind::DenseFm | ModelKind::AdnFm
        )
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, ModelKind::AdnFm)
    }
}

/// Architecture sizes. `embedding_dim` is both the embedding width and the
/// factor rank (the two tables are one and the same).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HyperParams {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub depth: usize,
    pub attn_dim: usize,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 1 || self.hidden_dim < 1 || self.depth < 1 || self.attn_dim < 1 {
            return Err(Error::Config(format!(
                "hyperparameters must all be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            embedding_dim: 10,
            hidden_dim: 32,
            depth: 2,
            attn_dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Every learnable parameter, one addressable store.
///
/// Flattening and serialization use the declaration order below: bias,
/// linear, factors, dense layers (weight then bias, in depth order),
/// attention weight / bias / score projection, readout, concat readout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// b, the global bias.
    pub bias: f64,
    /// w, one weight per sparse index.
    pub linear: Vec<f64>,
    /// V, the factor / embedding table, D x K. OOV rows are ordinary
    /// trainable rows.
    pub factors: Matrix,
    /// Dense stack; layer 0 maps F*K -> d, the rest d -> d.
    pub dense: Vec<DenseLayer>,
    /// Attention projection, e x d.
    pub attn_weight: Matrix,
    /// Attention bias, e.
    pub attn_bias: Vec<f64>,
    /// Score vector turning each attended layer into a scalar, e.
    pub attn_proj: Vec<f64>,
    /// q, the pooled readout, d.
    pub readout: Vec<f64>,
    /// Readout over the concatenated hidden layers (DenseFM head), L*d.
    pub readout_concat: Vec<f64>,
}

impl ModelParams {
    /// Xavier-uniform dense/attention weights, N(0, 0.01^2) factor rows and
    /// readouts, zero biases. Deterministic given the seed.
    pub fn init(schema: &FeatureSchema, hyper: &HyperParams, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let d = schema.total_dim();
        let f = schema.num_fields();
        let k = hyper.embedding_dim;
        let width = hyper.hidden_dim;
        let depth = hyper.depth;
        let e = hyper.attn_dim;
        let mut rng = Rng::seed_from(seed);

        let mut factors = Matrix::zeros(d, k);
        for v in factors.data_mut() {
            *v = 0.01 * rng.normal();
        }

        let xavier = |rows: usize, cols: usize, rng: &mut Rng| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let mut m = Matrix::zeros(rows, cols);
            for v in m.data_mut() {
                *v = rng.uniform(-limit, limit);
            }
            m
        };

        let mut dense = Vec::with_capacity(depth);
        for layer in 0..depth {
            let fan_in = if layer == 0 { f * k } else { width };
            dense.push(DenseLayer {
                weight: xavier(width, fan_in, &mut rng),
                bias: vec![0.0; width],
            });
        }

        let attn_weight = xavier(e, width, &mut rng);
        let attn_limit = (6.0 / (e + 1) as f64).sqrt();
        let attn_proj: Vec<f64> = (0..e).map(|_| rng.uniform(-attn_limit, attn_limit)).collect();
        let readout: Vec<f64> = (0..width).map(|_| 0.01 * rng.normal()).collect();
        let readout_concat: Vec<f64> = (0..depth * width).map(|_| 0.01 * rng.normal()).collect();

        Ok(ModelParams {
            bias: 0.0,
            linear: vec![0.0; d],
            factors,
            dense,
            attn_weight,
            attn_bias: vec![0.0; e],
            attn_proj,
            readout,
            readout_concat,
        })
    }

    /// All-zero parameters; test hook (zero params make every CTR prediction
    /// exactly 0.5).
    pub fn zeros(schema: &FeatureSchema, hyper: &HyperParams) -> Result<Self> {
        hyper.validate()?;
        let d = schema.total_dim();
        let f = schema.num_fields();
        let k = hyper.embedding_dim;
        let width = hyper.hidden_dim;
        let e = hyper.attn_dim;
        let dense = (0..hyper.depth)
            .map(|layer| {
                let fan_in = if layer == 0 { f * k } else { width };
                DenseLayer {
                    weight: Matrix::zeros(width, fan_in),
                    bias: vec![0.0; width],
                }
            })
            .collect();
        Ok(ModelParams {
            bias: 0.0,
            linear: vec![0.0; d],
            factors: Matrix::zeros(d, k),
            dense,
            attn_weight: Matrix::zeros(e, width),
            attn_bias: vec![0.0; e],
            attn_proj: vec![0.0; e],
            readout: vec![0.0; width],
            readout_concat: vec![0.0; hyper.depth * width],
        })
    }

    /// D, the sparse dimension.
    pub fn num_indices(&self) -> usize {
        self.factors.rows()
    }

    /// K, the factor rank / embedding width.
    pub fn embedding_dim(&self) -> usize {
        self.factors.cols()
    }

    /// L, the dense depth.
    pub fn depth(&self) -> usize {
        self.dense.len()
    }

    /// d, the hidden width.
    pub fn hidden_dim(&self) -> usize {
        self.readout.len()
    }

    /// F, inferred from the first dense layer's fan-in.
    pub fn num_fields(&self) -> usize {
        self.dense[0].weight.cols() / self.embedding_dim()
    }

    /// Parameter groups in flattening order, with their flat ranges.
    pub fn group_spans(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut spans = Vec::new();
        let mut at = 0usize;
        let mut push = |name: String, len: usize, at: &mut usize| {
            spans.push((name, *at..*at + len));
            *at += len;
        };
        push("bias".into(), 1, &mut at);
        push("linear".into(), self.linear.len(), &mut at);
        push("factors".into(), self.factors.data().len(), &mut at);
        for (i, layer) in self.dense.iter().enumerate() {
            push(format!("dense{i}.weight"), layer.weight.data().len(), &mut at);
            push(format!("dense{i}.bias"), layer.bias.len(), &mut at);
        }
        push("attn_weight".into(), self.attn_weight.data().len(), &mut at);
        push("attn_bias".into(), self.attn_bias.len(), &mut at);
        push("attn_proj".into(), self.attn_proj.len(), &mut at);
        push("readout".into(), self.readout.len(), &mut at);
        push("readout_concat".into(), self.readout_concat.len(), &mut at);
        spans
    }

    /// Human-readable name for a flat index, e.g. `factors[12]`.
    pub fn param_name(&self, flat_index: usize) -> String {
        for (name, range) in self.group_spans() {
            if range.contains(&flat_index) {
                return format!("{name}[{}]", flat_index - range.start);
            }
        }
        format!("<out of range {flat_index}>")
    }

    pub fn flat_len(&self) -> usize {
        self.group_spans().last().map_or(0, |(_, r)| r.end)
    }

    /// Flattens every group in declaration order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        out.push(self.bias);
        out.extend_from_slice(&self.linear);
        out.extend_from_slice(self.factors.data());
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

    /// Inverse of [`to_flat`](Self::to_flat); shapes must already match.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(Error::Config(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.flat_len()
            )));
        }
        let mut at = 0usize;
        let take = |len: usize, at: &mut usize| {
            let s = &flat[*at..*at + len];
            *at += len;
            s
        };
        self.bias = take(1, &mut at)[0];
        let n = self.linear.len();
        self.linear.copy_from_slice(take(n, &mut at));
        let n = self.factors.data().len();
        self.factors.data_mut().copy_from_slice(take(n, &mut at));
        for layer in &mut self.dense {
            let n = layer.weight.data().len();
            layer.weight.data_mut().copy_from_slice(take(n, &mut at));
            let n = layer.bias.len();
            layer.bias.copy_from_slice(take(n, &mut at));
        }
        let n = self.attn_weight.data().len();
        self.attn_weight.data_mut().copy_from_slice(take(n, &mut at));
        let n = self.attn_bias.len();
        self.attn_bias.copy_from_slice(take(n, &mut at));
        let n = self.attn_proj.len();
        self.attn_proj.copy_from_slice(take(n, &mut at));
        let n = self.readout.len();
        self.readout.copy_from_slice(take(n, &mut at));
        let n = self.readout_concat.len();
        self.readout_concat.copy_from_slice(take(n, &mut at));
        Ok(())
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    /// L2 norm over all parameters (diagnostics).
    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_interactions;

    fn small_schema() -> std::sync::Arc<FeatureSchema> {
        synth_interactions(10, 3, 4, 2, 1).unwrap().0.schema
    }

    #[test]
    fn init_is_deterministic() {
        let schema = small_schema();
        let hyper = HyperParams {
            embedding_dim: 4,
            hidden_dim: 8,
            depth: 2,
            attn_dim: 6,
        };
        let a = ModelParams::init(&schema, &hyper, 7).unwrap();
        let b = ModelParams::init(&schema, &hyper, 7).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
        let c = ModelParams::init(&schema, &hyper, 8).unwrap();
        assert_ne!(a.to_flat(), c.to_flat());
    }

    #[test]
    fn init_shapes() {
        let schema = small_schema(); // F = 3
        let hyper = HyperParams {
            embedding_dim: 4,
            hidden_dim: 8,
            depth: 2,
            attn_dim: 6,
        };
        let p = ModelParams::init(&schema, &hyper, 7).unwrap();
        // W0 maps the concatenated embeddings (F*K = 12) to d = 8
        assert_eq!(p.dense[0].weight.rows(), 8);
        assert_eq!(p.dense[0].weight.cols(), 12);
        assert_eq!(p.dense[1].weight.cols(), 8);
        assert_eq!(p.num_fields(), 3);
        assert_eq!(p.bias, 0.0);
        assert!(p.linear.iter().all(|&w| w == 0.0));
        assert!(p.dense.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn flat_roundtrip() {
        let schema = small_schema();
        let hyper = HyperParams {
            embedding_dim: 3,
            hidden_dim: 5,
            depth: 3,
            attn_dim: 4,
        };
        let p = ModelParams::init(&schema, &hyper, 3).unwrap();
        let flat = p.to_flat();
        assert_eq!(flat.len(), p.flat_len());
        let mut q = ModelParams::zeros(&schema, &hyper).unwrap();
        q.assign_flat(&flat).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn param_names_cover_groups() {
        let schema = small_schema();
        let p = ModelParams::zeros(&schema, &HyperParams::default()).unwrap();
        assert_eq!(p.param_name(0), "bias[0]");
        assert_eq!(p.param_name(1), "linear[0]");
        let spans = p.group_spans();
        assert_eq!(spans.last().unwrap().0, "readout_concat");
        assert_eq!(spans.last().unwrap().1.end, p.flat_len());
    }

    #[test]
    fn hyper_validation() {
        assert!(HyperParams {
            embedding_dim: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(HyperParams::default().validate().is_ok());
    }

    #[test]
    fn kind_names_roundtrip() {
        for kind in ModelKind::ALL {
            assert_eq!(ModelKind::parse(kind.name()).unwrap(), kind);
        }
        assert!(ModelKind::parse("nope").is_err());
    }
}
