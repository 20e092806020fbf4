//! Hashing heads, pseudo-code fusion network and shared classifier.
//!
//! All parameters live in one flat `f64` vector in a fixed tensor order (see
//! [`HashModel::tensors`]), which is also the checkpoint order. Gradient
//! buffers share that layout, so optimisers and finite-difference checks work on
//! plain slices.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, Modality};
use crate::error::{ensure, Result};
use crate::exec::Exec;

/// Desk-scale hidden width; the reference architecture uses 1024.
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_image: usize,
    pub d_text: usize,
    pub hidden: usize,
    /// Code length in bits.
    pub k: usize,
    /// Number of tags.
    pub c: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Dense {
    weight: usize,
    bias: Option<usize>,
    inputs: usize,
    outputs: usize,
}

impl Dense {
    fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    fn forward(&self, params: &[f64], x: &[f64], out: &mut Vec<f64>) {
        let w = &params[self.weight..self.weight + self.weight_len()];
        out.clear();
        for o in 0..self.outputs {
            let row = &w[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias.map_or(0.0, |b| params[b + o]);
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }

    /// Accumulates weight/bias gradients for upstream `dpre` and returns `Wᵀ·dpre`.
    fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        dpre: &[f64],
        grads: &mut [f64],
        want_input: bool,
    ) -> Vec<f64> {
        let mut dx = if want_input {
            vec![0.0; self.inputs]
        } else {
            Vec::new()
        };
        for (o, &g) in dpre.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let base = self.weight + o * self.inputs;
            for (gw, xi) in grads[base..base + self.inputs].iter_mut().zip(x) {
                *gw += g * xi;
            }
            if let Some(b) = self.bias {
                grads[b + o] += g;
            }
            if want_input {
                for (d, w) in dx.iter_mut().zip(&params[base..base + self.inputs]) {
                    *d += g * w;
                }
            }
        }
        dx
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    image: [Dense; 2],
    text: [Dense; 2],
    union: Dense,
    intersect: Dense,
    classifier: Dense,
    total: usize,
}

impl Layout {
    fn new(dims: &ModelDims) -> Self {
        let mut next = 0;
        let mut dense = |inputs: usize, outputs: usize, bias: bool| {
            let weight = next;
            next += inputs * outputs;
            let bias = bias.then(|| {
                let b = next;
                next += outputs;
                b
            });
            Dense {
                weight,
                bias,
                inputs,
                outputs,
            }
        };
        let image = [
            dense(dims.d_image, dims.hidden, true),
            dense(dims.hidden, dims.k, true),
        ];
        let text = [
            dense(dims.d_text, dims.hidden, true),
            dense(dims.hidden, dims.k, true),
        ];
        let union = dense(2 * dims.k, dims.k, false);
        let intersect = dense(2 * dims.k, dims.k, false);
        let classifier = dense(dims.k, dims.c, true);
        Layout {
            image,
            text,
            union,
            intersect,
            classifier,
            total: next,
        }
    }

    fn head(&self, modality: Modality) -> &[Dense; 2] {
        match modality {
            Modality::Image => &self.image,
            Modality::Text => &self.text,
        }
    }

    fn fusion(&self, op: FusionOp) -> &Dense {
        match op {
            FusionOp::Union => &self.union,
            FusionOp::Intersect => &self.intersect,
        }
    }
}

/// Named span of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionOp {
    Union,
    Intersect,
}

impl FusionOp {
    /// Label of the fused pseudo-code: `l1 ∪ l2` or `l1 ∩ l2`.
    pub fn fuse_labels(self, l1: &[u8], l2: &[u8]) -> Vec<u8> {
        l1.iter()
            .zip(l2)
            .map(|(&a, &b)| match self {
                FusionOp::Union => a | b,
                FusionOp::Intersect => a & b,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HashModel {
    dims: ModelDims,
    layout: Layout,
    params: Vec<f64>,
    grads: Vec<f64>,
}

/// Cached activations of one head evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadTrace {
    input: Vec<f64>,
    hidden: Vec<f64>,
    output: Vec<f64>,
}

impl HeadTrace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionTrace {
    input: Vec<f64>,
    output: Vec<f64>,
}

impl FusionTrace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierTrace {
    input: Vec<f64>,
    output: Vec<f64>,
}

impl ClassifierTrace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

fn tanh_in_place(v: &mut [f64]) {
    for x in v {
        *x = x.tanh();
    }
}

/// `d/dx tanh(x) = 1 − tanh(x)²`, applied to an upstream gradient.
fn tanh_backward(out: &[f64], upstream: &[f64]) -> Vec<f64> {
    out.iter()
        .zip(upstream)
        .map(|(z, g)| g * (1.0 - z * z))
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

impl HashModel {
    /// All-zero parameters.
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        ensure!(
            dims.d_image >= 1 && dims.d_text >= 1 && dims.hidden >= 1 && dims.k >= 1 && dims.c >= 1,
            InvalidArgument,
            "all model dimensions must be positive: {dims:?}"
        );
        let layout = Layout::new(&dims);
        let total = layout.total;
        Ok(Self {
            dims,
            layout,
            params: vec![0.0; total],
            grads: vec![0.0; total],
        })
    }

    /// Uniform `±1/√fan_in` weights, zero biases, deterministic per seed.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = [
            model.layout.image[0],
            model.layout.image[1],
            model.layout.text[0],
            model.layout.text[1],
            model.layout.union,
            model.layout.intersect,
            model.layout.classifier,
        ];
        for layer in layers {
            let scale = 1.0 / (layer.inputs as f64).sqrt();
            for w in &mut model.params[layer.weight..layer.weight + layer.weight_len()] {
                *w = rng.random_range(-scale..scale);
            }
        }
        Ok(model)
    }

    /// Wraps an existing parameter vector (e.g. from a checkpoint).
    pub fn from_params(dims: ModelDims, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(dims)?;
        ensure!(
            params.len() == model.params.len(),
            ShapeMismatch,
            "{} parameters for a model that needs {}",
            params.len(),
            model.params.len()
        );
        ensure!(
            params.iter().all(|p| p.is_finite()),
            InvalidArgument,
            "non-finite parameter"
        );
        model.params = params;
        Ok(model)
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    /// Parameters and gradient buffer together, for optimiser steps.
    pub fn params_and_grads(&mut self) -> (&mut [f64], &[f64]) {
        (&mut self.params, &self.grads)
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Tensor spans in checkpoint order.
    pub fn tensors(&self) -> Vec<TensorInfo> {
        let l = &self.layout;
        let mut out = Vec::new();
        let mut push = |name: &'static str, dense: &Dense, bias_name: Option<&'static str>| {
            out.push(TensorInfo {
                name,
                offset: dense.weight,
                len: dense.weight_len(),
            });
            if let (Some(b), Some(bn)) = (dense.bias, bias_name) {
                out.push(TensorInfo {
                    name: bn,
                    offset: b,
                    len: dense.outputs,
                });
            }
        };
        push("image.w1", &l.image[0], Some("image.b1"));
        push("image.w2", &l.image[1], Some("image.b2"));
        push("text.w1", &l.text[0], Some("text.b1"));
        push("text.w2", &l.text[1], Some("text.b2"));
        push("fusion.union", &l.union, None);
        push("fusion.intersect", &l.intersect, None);
        push("classifier.w", &l.classifier, Some("classifier.b"));
        out
    }

    pub fn input_dim(&self, modality: Modality) -> usize {
        match modality {
            Modality::Image => self.dims.d_image,
            Modality::Text => self.dims.d_text,
        }
    }

    /// `tanh(W₂·tanh(W₁x + b₁) + b₂)`.
    pub fn forward_head(&self, modality: Modality, x: &[f64]) -> Result<HeadTrace> {
        let d = self.input_dim(modality);
        ensure!(
            x.len() == d,
            ShapeMismatch,
            "{modality} head expects {d} features, got {}",
            x.len()
        );
        let [l1, l2] = self.layout.head(modality);
        let mut hidden = Vec::with_capacity(self.dims.hidden);
        l1.forward(&self.params, x, &mut hidden);
        tanh_in_place(&mut hidden);
        let mut output = Vec::with_capacity(self.dims.k);
        l2.forward(&self.params, &hidden, &mut output);
        tanh_in_place(&mut output);
        Ok(HeadTrace {
            input: x.to_vec(),
            hidden,
            output,
        })
    }

    pub fn backward_head(
        &self,
        modality: Modality,
        trace: &HeadTrace,
        dz: &[f64],
        grads: &mut [f64],
    ) {
        let [l1, l2] = self.layout.head(modality);
        let dpre2 = tanh_backward(&trace.output, dz);
        let dh = l2.backward(&self.params, &trace.hidden, &dpre2, grads, true);
        let dpre1 = tanh_backward(&trace.hidden, &dh);
        l1.backward(&self.params, &trace.input, &dpre1, grads, false);
    }

    /// `tanh(W·[z1, z2])` with the union or intersection weights.
    pub fn forward_fusion(&self, op: FusionOp, z1: &[f64], z2: &[f64]) -> Result<FusionTrace> {
        let k = self.dims.k;
        ensure!(
            z1.len() == k && z2.len() == k,
            ShapeMismatch,
            "fusion expects two {k}-bit codes, got {} and {}",
            z1.len(),
            z2.len()
        );
        let mut input = Vec::with_capacity(2 * k);
        input.extend_from_slice(z1);
        input.extend_from_slice(z2);
        let mut output = Vec::with_capacity(k);
        self.layout
            .fusion(op)
            .forward(&self.params, &input, &mut output);
        tanh_in_place(&mut output);
        Ok(FusionTrace { input, output })
    }

    /// Returns the gradients flowing back into `z1` and `z2`.
    pub fn backward_fusion(
        &self,
        op: FusionOp,
        trace: &FusionTrace,
        du: &[f64],
        grads: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let dpre = tanh_backward(&trace.output, du);
        let mut dx =
            self.layout
                .fusion(op)
                .backward(&self.params, &trace.input, &dpre, grads, true);
        let dz2 = dx.split_off(self.dims.k);
        (dx, dz2)
    }

    /// `sigmoid(W·z + b)`, kept strictly inside (0, 1).
    pub fn forward_classifier(&self, z: &[f64]) -> Result<ClassifierTrace> {
        let k = self.dims.k;
        ensure!(
            z.len() == k,
            ShapeMismatch,
            "classifier expects a {k}-bit code, got {}",
            z.len()
        );
        let mut output = Vec::with_capacity(self.dims.c);
        self.layout.classifier.forward(&self.params, z, &mut output);
        for v in &mut output {
            *v = sigmoid(*v);
        }
        Ok(ClassifierTrace {
            input: z.to_vec(),
            output,
        })
    }

    /// Returns the gradient flowing back into the classified code.
    pub fn backward_classifier(
        &self,
        trace: &ClassifierTrace,
        dp: &[f64],
        grads: &mut [f64],
    ) -> Vec<f64> {
        let dlogit: Vec<f64> = trace
            .output
            .iter()
            .zip(dp)
            .map(|(p, g)| g * p * (1.0 - p))
            .collect();
        self.layout
            .classifier
            .backward(&self.params, &trace.input, &dlogit, grads, true)
    }

    /// Full forward pass for one triplet in both modalities.
    ///
    /// Codes per modality are `[z1, z2, z3, f_u(z1, z2), f_t(z1, z2)]`, and the
    /// shared classifier is applied to all five.
    pub fn forward_triplet(
        &self,
        image: [&[f64]; 3],
        text: [&[f64]; 3],
    ) -> Result<TripletActivations> {
        let run = |modality: Modality, rows: [&[f64]; 3]| -> Result<ModalityActivations> {
            let heads = [
                self.forward_head(modality, rows[0])?,
                self.forward_head(modality, rows[1])?,
                self.forward_head(modality, rows[2])?,
            ];
            let union = self.forward_fusion(FusionOp::Union, &heads[0].output, &heads[1].output)?;
            let intersect =
                self.forward_fusion(FusionOp::Intersect, &heads[0].output, &heads[1].output)?;
            let classify = |z: &[f64]| self.forward_classifier(z);
            let classifier = [
                classify(&heads[0].output)?,
                classify(&heads[1].output)?,
                classify(&heads[2].output)?,
                classify(&union.output)?,
                classify(&intersect.output)?,
            ];
            Ok(ModalityActivations {
                heads,
                fusion: [union, intersect],
                classifier,
            })
        };
        Ok(TripletActivations {
            modalities: [run(Modality::Image, image)?, run(Modality::Text, text)?],
        })
    }

    /// Reverse pass for [`HashModel::forward_triplet`], accumulating into `grads`.
    pub fn backward_triplet(
        &self,
        act: &TripletActivations,
        upstream: &TripletGrads,
        grads: &mut [f64],
    ) {
        for (m, modality) in [Modality::Image, Modality::Text].into_iter().enumerate() {
            let a = &act.modalities[m];
            let mut dz: [Vec<f64>; 5] = upstream.codes[m].clone();
            for j in 0..5 {
                let back = self.backward_classifier(&a.classifier[j], &upstream.probs[m][j], grads);
                add_into(&mut dz[j], &back);
            }
            for (f, op) in [FusionOp::Union, FusionOp::Intersect]
                .into_iter()
                .enumerate()
            {
                let (d1, d2) = self.backward_fusion(op, &a.fusion[f], &dz[3 + f], grads);
                add_into(&mut dz[0], &d1);
                add_into(&mut dz[1], &d2);
            }
            for j in 0..3 {
                self.backward_head(modality, &a.heads[j], &dz[j], grads);
            }
        }
    }

    /// Relaxed and binary codes for every row of `features`.
    pub fn encode(&self, features: &FeatureMatrix) -> Result<CodeBatch> {
        self.encode_with(features, Exec::default())
    }

    pub fn encode_with(&self, features: &FeatureMatrix, exec: Exec) -> Result<CodeBatch> {
        let modality = features.modality();
        let d = self.input_dim(modality);
        ensure!(
            features.d() == d,
            ShapeMismatch,
            "{modality} head expects {d} features, file has {}",
            features.d()
        );
        let rows = exec.try_map_range(features.n(), |i| {
            let x = to_f64(features.row(i));
            self.forward_head(modality, &x).map(|t| t.output)
        })?;
        Ok(CodeBatch::from_relaxed(
            features.n(),
            self.dims.k,
            rows.concat(),
        ))
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

pub(crate) fn to_f64(row: &[f32]) -> Vec<f64> {
    row.iter().map(|&v| f64::from(v)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModalityActivations {
    heads: [HeadTrace; 3],
    fusion: [FusionTrace; 2],
    classifier: [ClassifierTrace; 5],
}

impl ModalityActivations {
    /// Code `j` in `0..5`: three real codes, then union and intersection pseudo-codes.
    pub fn code(&self, j: usize) -> &[f64] {
        match j {
            0..=2 => &self.heads[j].output,
            3 | 4 => &self.fusion[j - 3].output,
            _ => panic!("code index {j} out of range"),
        }
    }

    pub fn probs(&self, j: usize) -> &[f64] {
        &self.classifier[j].output
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletActivations {
    /// `[image, text]`.
    pub modalities: [ModalityActivations; 2],
}

/// Upstream gradients with respect to every triplet output, indexed
/// `[modality][code]` with modality 0 = image, 1 = text.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletGrads {
    pub codes: [[Vec<f64>; 5]; 2],
    pub probs: [[Vec<f64>; 5]; 2],
}

impl TripletGrads {
    pub fn zeros(k: usize, c: usize) -> Self {
        let codes = || std::array::from_fn(|_| vec![0.0; k]);
        let probs = || std::array::from_fn(|_| vec![0.0; c]);
        Self {
            codes: [codes(), codes()],
            probs: [probs(), probs()],
        }
    }
}

/// `+1` where `z ≥ 0`, `−1` otherwise (so `sgn(0) = +1`).
pub fn binarize(z: &[f64]) -> Vec<i8> {
    z.iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect()
}

/// B×K relaxed codes with their binarisation.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeBatch {
    pub n: usize,
    pub k: usize,
    pub relaxed: Vec<f64>,
    pub binary: Vec<i8>,
}

impl CodeBatch {
    pub fn from_relaxed(n: usize, k: usize, relaxed: Vec<f64>) -> Self {
        debug_assert_eq!(relaxed.len(), n * k);
        let binary = binarize(&relaxed);
        Self {
            n,
            k,
            relaxed,
            binary,
        }
    }

    pub fn relaxed_row(&self, i: usize) -> &[f64] {
        &self.relaxed[i * self.k..(i + 1) * self.k]
    }

    pub fn binary_row(&self, i: usize) -> &[i8] {
        &self.binary[i * self.k..(i + 1) * self.k]
    }
}
