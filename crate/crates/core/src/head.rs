//! Trainable maps from features to cluster probabilities.
//!
//! [`Mlp`] is a stack of affine layers with ReLU between consecutive layers
//! (none after the last). A [`ClassifierHead`] is a one- or two-layer `Mlp`
//! followed by a row-wise softmax; the optional mini-backbone producing the
//! features is a two-layer `Mlp` of its own.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::data::io::{read_f32, read_u32};
use crate::error::{Error, Result};
use crate::rng::RngState;

/// Affine layer `y = x W + b` with `W` of shape `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    /// Weights drawn from N(0, 1/in), zero bias.
    pub fn init(input: usize, output: usize, rng: &mut RngState) -> Self {
        let std = 1.0 / (input as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((input, output), |_| std * rng.normal()),
            bias: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

/// Affine layers joined by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Per-layer inputs recorded by [`Mlp::forward_traced`].
#[derive(Debug, Clone)]
pub struct MlpTrace {
    inputs: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<DenseGrads>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| DenseGrads {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    /// Flat views in the same order as [`Mlp::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|g| {
                [
                    g.weight.as_slice().expect("standard layout"),
                    g.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("an MLP needs at least one layer".into()));
        }
        for (l, w) in layers.iter().zip(layers.iter().skip(1)) {
            if l.output_dim() != w.input_dim() {
                return Err(Error::Shape(format!(
                    "layer widths do not chain: {} -> {}",
                    l.output_dim(),
                    w.input_dim()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::Shape("bias length differs from layer width".into()));
            }
        }
        Ok(Self { layers })
    }

    /// Randomly initialised layers with widths `dims[0] -> dims[1] -> ...`.
    pub fn init(dims: &[usize], rng: &mut RngState) -> Self {
        assert!(dims.len() >= 2 && dims.iter().all(|&d| d >= 1));
        Self {
            layers: dims.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect(),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_traced(x)?.output)
    }

    pub fn forward_traced(&self, x: ArrayView2<'_, f64>) -> Result<MlpTrace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut out = layer.forward(h.view());
            if idx + 1 < self.layers.len() {
                out.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = out;
        }
        Ok(MlpTrace { inputs, output: h })
    }

    /// Gradients of a scalar w.r.t. every parameter and the input, given its
    /// gradient w.r.t. the output of the traced forward pass.
    pub fn backward(&self, trace: &MlpTrace, grad_output: ArrayView2<'_, f64>) -> Result<(MlpGrads, Array2<f64>)> {
        if grad_output.dim() != trace.output.dim() {
            return Err(Error::Shape(format!(
                "output gradient {:?} vs output {:?}",
                grad_output.dim(),
                trace.output.dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_output.to_owned();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.inputs[idx];
            grads.push(DenseGrads {
                weight: input.t().dot(&g),
                bias: g.sum_axis(Axis(0)),
            });
            let mut gin = g.dot(&layer.weight.t());
            if idx > 0 {
                // the input of layer idx is relu(z); relu' is 1 exactly where the output was positive
                ndarray::Zip::from(&mut gin)
                    .and(input)
                    .for_each(|gi, &a| if a <= 0.0 { *gi = 0.0 });
            }
            g = gin;
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, g))
    }

    /// Mutable flat parameter views: weight then bias, layer by layer.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeadKind {
    #[default]
    Linear,
    /// Affine, ReLU, affine.
    TwoLayer,
}

impl std::str::FromStr for HeadKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear" => Ok(HeadKind::Linear),
            "two_layer" => Ok(HeadKind::TwoLayer),
            _ => Err(format!("unknown head kind `{s}`")),
        }
    }
}

pub const DEFAULT_HIDDEN: usize = 128;

/// Row-stochastic softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix(Array2<f64>);

impl ProbMatrix {
    /// Validates that every row is a probability vector (sum within 1e-6).
    pub fn new(p: Array2<f64>) -> Result<Self> {
        for (i, row) in p.rows().into_iter().enumerate() {
            let s: f64 = row.sum();
            if (s - 1.0).abs() > 1e-6 || row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Row {
                    row: i,
                    msg: "not a probability vector".into(),
                });
            }
        }
        Ok(Self(p))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn argmax(&self) -> Vec<usize> {
        self.0
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                    .0
            })
            .collect()
    }
}

/// Row-wise softmax with max shift.
pub fn softmax(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut p = logits.to_owned();
    for mut row in p.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// Chain rule through a row-wise softmax:
/// `dL/dz_k = p_k (dL/dp_k - Σ_m p_m dL/dp_m)`.
pub fn softmax_backward(probs: ArrayView2<'_, f64>, grad_probs: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut g = grad_probs.to_owned();
    for (mut gr, pr) in g.rows_mut().into_iter().zip(probs.rows()) {
        let inner = gr.dot(&pr);
        gr.zip_mut_with(&pr, |gk, &pk| *gk = pk * (*gk - inner));
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    net: Mlp,
}

#[derive(Debug, Clone)]
pub struct HeadOutput {
    pub logits: Array2<f64>,
    pub probs: ProbMatrix,
    trace: MlpTrace,
}

/// Parameter gradients plus the gradient w.r.t. the head's input features.
#[derive(Debug, Clone)]
pub struct HeadGradients {
    pub params: MlpGrads,
    pub features: Array2<f64>,
}

impl ClassifierHead {
    pub fn init(kind: HeadKind, dim: usize, hidden: usize, k: usize, rng: &mut RngState) -> Result<Self> {
        if dim == 0 || k == 0 || (kind == HeadKind::TwoLayer && hidden == 0) {
            return Err(Error::Shape(format!("invalid head shape D={dim}, H={hidden}, K={k}")));
        }
        let dims = match kind {
            HeadKind::Linear => vec![dim, k],
            HeadKind::TwoLayer => vec![dim, hidden, k],
        };
        Ok(Self { net: Mlp::init(&dims, rng) })
    }

    pub fn from_mlp(net: Mlp) -> Result<Self> {
        if net.layers().len() > 2 {
            return Err(Error::Shape("a classifier head has one or two layers".into()));
        }
        Ok(Self { net })
    }

    pub fn kind(&self) -> HeadKind {
        if self.net.layers().len() == 1 {
            HeadKind::Linear
        } else {
            HeadKind::TwoLayer
        }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn n_clusters(&self) -> usize {
        self.net.output_dim()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.net
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn forward(&self, features: ArrayView2<'_, f64>) -> Result<HeadOutput> {
        let trace = self.net.forward_traced(features)?;
        let logits = trace.output.clone();
        let probs = ProbMatrix(softmax(logits.view()));
        Ok(HeadOutput { logits, probs, trace })
    }

    /// Back-propagates `dL/dp` through softmax and the affine layers.
    pub fn backward(&self, out: &HeadOutput, grad_probs: ArrayView2<'_, f64>) -> Result<HeadGradients> {
        if grad_probs.dim() != out.probs.0.dim() {
            return Err(Error::Shape(format!(
                "probability gradient {:?} vs probabilities {:?}",
                grad_probs.dim(),
                out.probs.0.dim()
            )));
        }
        let grad_logits = softmax_backward(out.probs.view(), grad_probs);
        let (params, features) = self.net.backward(&out.trace, grad_logits.view())?;
        Ok(HeadGradients { params, features })
    }
}

/// Optional mini-backbone followed by the classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub backbone: Option<Mlp>,
    pub head: ClassifierHead,
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LSDH";

impl Network {
    pub fn input_dim(&self) -> usize {
        self.backbone.as_ref().map_or(self.head.input_dim(), Mlp::input_dim)
    }

    /// Features as seen by the head.
    pub fn embed(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match &self.backbone {
            Some(b) => b.forward(x),
            None => {
                if x.ncols() != self.head.input_dim() {
                    return Err(Error::Shape(format!(
                        "input has {} columns, model expects {}",
                        x.ncols(),
                        self.head.input_dim()
                    )));
                }
                Ok(x.to_owned())
            }
        }
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<ProbMatrix> {
        let f = self.embed(x)?;
        Ok(self.head.forward(f.view())?.probs)
    }

    /// Layout: `b"LSDH"`, `u32` layer count, `u32` backbone layer count,
    /// `u32` zero; then per layer `u32` in, `u32` out, `u32` zero, followed
    /// by `in×out` row-major `f32` weights and `out` `f32` biases.
    pub fn to_bytes(&self) -> Vec<u8> {
        let backbone_layers = self.backbone.as_ref().map_or(0, |b| b.layers().len());
        let layers: Vec<&Dense> = self
            .backbone
            .iter()
            .flat_map(|b| b.layers())
            .chain(self.head.mlp().layers())
            .collect();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [layers.len(), backbone_layers, 0] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for l in layers {
            for v in [l.input_dim(), l.output_dim(), 0] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
            for &w in l.weight.iter().chain(l.bias.iter()) {
                out.extend_from_slice(&(w as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Invalid(format!("malformed checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("expected LSDH magic"));
        }
        let n_layers = read_u32(bytes, 4).unwrap() as usize;
        let n_backbone = read_u32(bytes, 8).unwrap() as usize;
        if n_layers == 0 || n_backbone >= n_layers || n_layers - n_backbone > 2 {
            return Err(bad("inconsistent layer counts"));
        }
        let mut at = 16;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let input = read_u32(bytes, at).ok_or_else(|| bad("truncated layer header"))? as usize;
            let output = read_u32(bytes, at + 4).ok_or_else(|| bad("truncated layer header"))? as usize;
            at += 12;
            let mut vals = Vec::with_capacity(input * output + output);
            for _ in 0..input * output + output {
                let v = read_f32(bytes, at).ok_or_else(|| bad("truncated payload"))?;
                if !v.is_finite() {
                    return Err(bad("non-finite parameter"));
                }
                vals.push(v as f64);
                at += 4;
            }
            let bias = Array1::from(vals.split_off(input * output));
            let weight = Array2::from_shape_vec((input, output), vals).map_err(|e| Error::Shape(e.to_string()))?;
            layers.push(Dense { weight, bias });
        }
        if at != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let head_layers = layers.split_off(n_backbone);
        let backbone = if layers.is_empty() { None } else { Some(Mlp::new(layers)?) };
        let head = ClassifierHead::from_mlp(Mlp::new(head_layers)?)?;
        if let Some(b) = &backbone {
            if b.output_dim() != head.input_dim() {
                return Err(bad("backbone output does not match head input"));
            }
        }
        Ok(Self { backbone, head })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?).map_err(|e| match e {
            Error::Invalid(msg) => Error::Parse {
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })
    }
}
