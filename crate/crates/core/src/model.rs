//! Small fully connected embedding network with hand-written backprop.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => libm::tanh(z),
        }
    }

    /// Derivative expressed through the pre-activation.
    #[inline]
    fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = libm::tanh(z);
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Input width, hidden widths, embedding width.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub init_scale: f64,
    pub seed: u64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::InvalidConfig("model needs an input and an output width"));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive"));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::InvalidConfig("init_scale must be positive"));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        *self.layer_widths.last().unwrap_or(&0)
    }
}

/// Affine layer `y = x W^T + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.out_dim());
        for r in 0..x.rows() {
            let xr = x.row(r);
            for (o, (w, b)) in out.row_mut(r).iter_mut().zip(self.weight.iter_rows().zip(&self.bias)) {
                *o = b + crate::matrix::dot(w, xr);
            }
        }
        out
    }
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of each layer.
    inputs: Vec<Matrix>,
    /// Pre-activation output of each hidden layer.
    pre_activations: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<DenseGrad>,
}

impl MlpGradients {
    /// Flat views in the same order as [`Mlp::parameters`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|g| [g.weight.as_slice(), g.bias.as_slice()])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    activation: Activation,
}

impl Mlp {
    /// Uniform init in `[-a, a]` with `a = init_scale * sqrt(3 / fan_in)`,
    /// zero biases.
    pub fn init(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = crate::seed::rng(spec.seed);
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = spec.init_scale * libm::sqrt(3.0 / fan_in as f64);
                let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..=a)).collect();
                Dense {
                    weight: Matrix::from_vec(fan_out, fan_in, data).expect("sized"),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self {
            layers,
            activation: spec.activation,
        })
    }

    pub fn from_layers(layers: Vec<Dense>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("model needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].out_dim(),
                    actual: pair[1].in_dim(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.out_dim() {
                return Err(Error::DimensionMismatch {
                    expected: l.out_dim(),
                    actual: l.bias.len(),
                });
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(Dense::out_dim));
        w
    }

    /// Flat parameter views: weight then bias of each layer.
    pub fn parameters(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                what: "model input",
                expected: (batch.rows(), self.input_dim()),
                actual: batch.shape(),
            });
        }
        Ok(())
    }

    /// Embeddings only; no cache.
    pub fn embed(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let last = self.layers.len() - 1;
        let mut h = batch.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if k < last {
                h.as_mut_slice().iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
        }
        Ok(h)
    }

    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(batch)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(last);
        let mut h = batch.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            inputs.push(h);
            if k < last {
                let mut a = z.clone();
                a.as_mut_slice().iter_mut().for_each(|v| *v = self.activation.apply(*v));
                pre_activations.push(z);
                h = a;
            } else {
                h = z;
            }
        }
        Ok((
            h,
            ForwardCache {
                inputs,
                pre_activations,
            },
        ))
    }

    pub fn backward(&self, cache: &ForwardCache, d_out: &Matrix) -> Result<MlpGradients> {
        if cache.inputs.len() != self.layers.len() || cache.pre_activations.len() + 1 != self.layers.len() {
            return Err(Error::StaleCache);
        }
        let batch = cache.inputs[0].rows();
        for (layer, input) in self.layers.iter().zip(&cache.inputs) {
            if input.shape() != (batch, layer.in_dim()) {
                return Err(Error::StaleCache);
            }
        }
        if d_out.shape() != (batch, self.output_dim()) {
            return Err(Error::StaleCache);
        }

        let mut grads: Vec<DenseGrad> = Vec::with_capacity(self.layers.len());
        let mut delta = d_out.clone();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &cache.inputs[k];
            let mut gw = Matrix::zeros(layer.out_dim(), layer.in_dim());
            let mut gb = vec![0.0; layer.out_dim()];
            for r in 0..batch {
                let d = delta.row(r);
                let x = input.row(r);
                for (o, &dv) in d.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    gb[o] += dv;
                    for (g, xv) in gw.row_mut(o).iter_mut().zip(x) {
                        *g += dv * xv;
                    }
                }
            }
            grads.push(DenseGrad { weight: gw, bias: gb });

            if k > 0 {
                let mut prev = Matrix::zeros(batch, layer.in_dim());
                for r in 0..batch {
                    let d = delta.row(r);
                    let out = prev.row_mut(r);
                    for (o, &dv) in d.iter().enumerate() {
                        if dv == 0.0 {
                            continue;
                        }
                        for (p, w) in out.iter_mut().zip(layer.weight.row(o)) {
                            *p += dv * w;
                        }
                    }
                }
                let z = &cache.pre_activations[k - 1];
                for (p, zv) in prev.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *p *= self.activation.grad(*zv);
                }
                delta = prev;
            }
        }
        grads.reverse();
        Ok(MlpGradients { layers: grads })
    }
}
