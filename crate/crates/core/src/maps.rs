//! Parametric maps: affine maps and fully connected networks
//! `h_l = σ_l(W_l h_{l-1} + b_l)`, with reverse-mode gradients and a JSON checkpoint.
//!
//! Batches are matrices whose rows are samples. Flat parameter vectors list layers
//! in order, each as its weight matrix (row-major, `out × in`) followed by its bias.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative from the pre-activation `z` and output `a`. ReLU'(0) = 0.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub units: usize,
    pub activation: Activation,
}

/// Architecture of a map, used to initialize a [`MapModel`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    Linear {
        input_dim: usize,
        output_dim: usize,
        #[serde(default)]
        bias: bool,
    },
    Mlp {
        input_dim: usize,
        layers: Vec<LayerSpec>,
    },
}

impl MapSpec {
    pub fn input_dim(&self) -> usize {
        match self {
            MapSpec::Linear { input_dim, .. } | MapSpec::Mlp { input_dim, .. } => *input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            MapSpec::Linear { output_dim, .. } => *output_dim,
            MapSpec::Mlp { input_dim, layers } => layers.last().map_or(*input_dim, |l| l.units),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("map spec: {what}")));
        match self {
            MapSpec::Linear {
                input_dim,
                output_dim,
                ..
            } => {
                if *input_dim == 0 || *output_dim == 0 {
                    return bad("linear map dimensions must be positive");
                }
            }
            MapSpec::Mlp { input_dim, layers } => {
                if *input_dim == 0 {
                    return bad("input dimension must be positive");
                }
                if layers.is_empty() {
                    return bad("network needs at least one layer");
                }
                if layers.iter().any(|l| l.units == 0) {
                    return bad("layer widths must be positive");
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapModel {
    /// `x ↦ W x (+ b)`.
    Linear {
        weight: Matrix,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<Vec<f64>>,
    },
    Mlp { layers: Vec<Layer> },
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `inputs[l]` is the input of layer `l`; the last entry is the output.
    activations: Vec<Matrix>,
    /// Pre-activations `W h + b` per layer.
    pre: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("trace has the input at least")
    }

    pub fn into_output(mut self) -> Matrix {
        self.activations.pop().expect("trace has the input at least")
    }
}

/// Gradients returned by [`MapModel::backward`].
#[derive(Clone, Debug)]
pub struct MapGradient {
    /// Same layout as [`MapModel::params`].
    pub params: Vec<f64>,
    /// Gradient with respect to the input batch.
    pub inputs: Matrix,
}

fn affine(h: &Matrix, w: &Matrix, b: Option<&[f64]>) -> Matrix {
    // Rows of h are samples: z = h Wᵀ + 1 bᵀ.
    let (n, out) = (h.rows(), w.rows());
    let mut z = Matrix::zeros(n, out);
    for s in 0..n {
        let hs = h.row(s);
        let zs = z.row_mut(s);
        for (o, zo) in zs.iter_mut().enumerate() {
            let mut acc = b.map_or(0.0, |b| b[o]);
            for (wi, hi) in w.row(o).iter().zip(hs) {
                acc += wi * hi;
            }
            *zo = acc;
        }
    }
    z
}

impl MapModel {
    /// Glorot-uniform weights `U(±sqrt(6/(fan_in + fan_out)))`, zero biases.
    pub fn init(spec: &MapSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let glorot = |rng: &mut Rng, out: usize, inp: usize| {
            let limit = (6.0 / (inp + out) as f64).sqrt();
            Matrix::from_fn(out, inp, |_, _| rng.uniform_range(-limit, limit))
        };
        Ok(match spec {
            MapSpec::Linear {
                input_dim,
                output_dim,
                bias,
            } => MapModel::Linear {
                weight: glorot(rng, *output_dim, *input_dim),
                bias: bias.then(|| vec![0.0; *output_dim]),
            },
            MapSpec::Mlp { input_dim, layers } => {
                let mut prev = *input_dim;
                let mut out = Vec::with_capacity(layers.len());
                for l in layers {
                    out.push(Layer {
                        weight: glorot(rng, l.units, prev),
                        bias: vec![0.0; l.units],
                        activation: l.activation,
                    });
                    prev = l.units;
                }
                MapModel::Mlp { layers: out }
            }
        })
    }

    /// Linear map `x ↦ W x` without bias.
    pub fn linear(weight: Matrix) -> Self {
        MapModel::Linear { weight, bias: None }
    }

    pub fn identity(dim: usize) -> Self {
        Self::linear(Matrix::identity(dim))
    }

    /// Checks shape invariants (used after deserialization).
    pub fn validate(&self) -> Result<()> {
        match self {
            MapModel::Linear { weight, bias } => {
                weight.ensure_finite("linear weight")?;
                if weight.rows() == 0 || weight.cols() == 0 {
                    return Err(Error::dim("linear weight must be non-empty"));
                }
                if let Some(b) = bias {
                    if b.len() != weight.rows() {
                        return Err(Error::dim(format!(
                            "bias length {} does not match output dimension {}",
                            b.len(),
                            weight.rows()
                        )));
                    }
                    if b.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite("linear bias".into()));
                    }
                }
            }
            MapModel::Mlp { layers } => {
                if layers.is_empty() {
                    return Err(Error::dim("network needs at least one layer"));
                }
                for (k, l) in layers.iter().enumerate() {
                    l.weight.ensure_finite("layer weight")?;
                    if l.weight.rows() == 0 || l.weight.cols() == 0 {
                        return Err(Error::dim(format!("layer {k} has an empty weight")));
                    }
                    if l.bias.len() != l.weight.rows() {
                        return Err(Error::dim(format!("layer {k} bias length mismatch")));
                    }
                    if l.bias.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite(format!("layer {k} bias")));
                    }
                    if k > 0 && layers[k - 1].weight.rows() != l.weight.cols() {
                        return Err(Error::dim(format!(
                            "layer {k} expects input {} but previous layer outputs {}",
                            l.weight.cols(),
                            layers[k - 1].weight.rows()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match self {
            MapModel::Linear { weight, .. } => weight.cols(),
            MapModel::Mlp { layers } => layers[0].weight.cols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            MapModel::Linear { weight, .. } => weight.rows(),
            MapModel::Mlp { layers } => layers[layers.len() - 1].weight.rows(),
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim(format!(
                "map expects inputs of dimension {}, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.forward_trace(x).map(ForwardTrace::into_output)
    }

    pub fn forward_trace(&self, x: &Matrix) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut activations = vec![x.clone()];
        let mut pre = Vec::new();
        match self {
            MapModel::Linear { weight, bias } => {
                let z = affine(x, weight, bias.as_deref());
                pre.push(z.clone());
                activations.push(z);
            }
            MapModel::Mlp { layers } => {
                for l in layers {
                    let z = affine(activations.last().expect("non-empty"), &l.weight, Some(&l.bias));
                    let mut a = z.clone();
                    a.as_mut_slice().iter_mut().for_each(|v| *v = l.activation.apply(*v));
                    pre.push(z);
                    activations.push(a);
                }
            }
        }
        Ok(ForwardTrace { activations, pre })
    }

    /// Gradients of `Σ ⟨upstream, forward(x)⟩` given the trace of `forward(x)`.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &Matrix) -> Result<MapGradient> {
        let out = trace.output();
        if upstream.shape() != out.shape() {
            return Err(Error::dim(format!(
                "upstream gradient has shape {:?}, outputs have {:?}",
                upstream.shape(),
                out.shape()
            )));
        }
        let n = upstream.rows();
        match self {
            MapModel::Linear { weight, bias } => {
                let x = &trace.activations[0];
                let mut params = Vec::with_capacity(self.num_params());
                params.extend_from_slice(upstream.transpose().mul_unchecked(x).as_slice());
                if bias.is_some() {
                    params.extend(column_sums(upstream));
                }
                Ok(MapGradient {
                    params,
                    inputs: upstream.mul_unchecked(weight),
                })
            }
            MapModel::Mlp { layers } => {
                let mut per_layer: Vec<(Matrix, Vec<f64>)> = Vec::with_capacity(layers.len());
                let mut delta_out = upstream.clone();
                for (k, l) in layers.iter().enumerate().rev() {
                    let z = &trace.pre[k];
                    let a = &trace.activations[k + 1];
                    let mut delta = delta_out;
                    for ((d, zv), av) in delta.as_mut_slice().iter_mut().zip(z.as_slice()).zip(a.as_slice()) {
                        *d *= l.activation.derivative(*zv, *av);
                    }
                    let h = &trace.activations[k];
                    let dw = delta.transpose().mul_unchecked(h);
                    let db = column_sums(&delta);
                    delta_out = delta.mul_unchecked(&l.weight);
                    per_layer.push((dw, db));
                }
                per_layer.reverse();
                let mut params = Vec::with_capacity(self.num_params());
                for (dw, db) in per_layer {
                    params.extend_from_slice(dw.as_slice());
                    params.extend(db);
                }
                debug_assert_eq!(delta_out.rows(), n);
                Ok(MapGradient {
                    params,
                    inputs: delta_out,
                })
            }
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            MapModel::Linear { weight, bias } => weight.as_slice().len() + bias.as_ref().map_or(0, Vec::len),
            MapModel::Mlp { layers } => layers
                .iter()
                .map(|l| l.weight.as_slice().len() + l.bias.len())
                .sum(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        match self {
            MapModel::Linear { weight, bias } => {
                p.extend_from_slice(weight.as_slice());
                if let Some(b) = bias {
                    p.extend_from_slice(b);
                }
            }
            MapModel::Mlp { layers } => {
                for l in layers {
                    p.extend_from_slice(l.weight.as_slice());
                    p.extend_from_slice(&l.bias);
                }
            }
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::dim(format!(
                "parameter vector has length {}, model has {}",
                p.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&p[off..off + dst.len()]);
            off += dst.len();
        };
        match self {
            MapModel::Linear { weight, bias } => {
                take(weight.as_mut_slice());
                if let Some(b) = bias {
                    take(b);
                }
            }
            MapModel::Mlp { layers } => {
                for l in layers {
                    take(l.weight.as_mut_slice());
                    take(&mut l.bias);
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: MapModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut s = vec![0.0; m.cols()];
    for r in m.row_iter() {
        for (a, v) in s.iter_mut().zip(r) {
            *a += v;
        }
    }
    s
}
