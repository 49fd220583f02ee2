//! Feed-forward classifier with hand-derived backpropagation.
//!
//! Activations are carried as row-major `[batch, width]` buffers so a whole
//! mini-batch goes through one matrix product per layer. Gradients returned by
//! [`Network::backward`] are sums over the batch rows; the caller decides how
//! to normalize them.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softmax,
    Identity,
}

impl Activation {
    /// Checkpoint code: 0 identity, 1 relu, 2 softmax.
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Softmax => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Softmax),
            _ => None,
        }
    }

    /// Applies the activation in place to one row of pre-activations.
    pub fn apply(self, row: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => row.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Softmax => softmax_in_place(row),
        }
    }
}

/// Max-shifted softmax.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `[out, in]`
    pub weights: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn zeros(input_dim: usize, output_dim: usize) -> Result<Self> {
        Ok(Self {
            weights: Tensor::zeros(&[output_dim, input_dim])?,
            bias: Tensor::zeros(&[output_dim])?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.dims()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weights.dims()[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub dense: DenseLayer,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    input: Vec<f64>,
    /// Pre-activations per layer, `[batch, out]`.
    pre: Vec<Vec<f64>>,
    /// Activations per layer, `[batch, out]`.
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn pre_activations(&self, layer: usize) -> &[f64] {
        &self.pre[layer]
    }

    pub fn activations(&self, layer: usize) -> &[f64] {
        &self.post[layer]
    }

    /// Network output for the whole batch, `[batch, M]`.
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("network has at least one layer")
    }

    pub fn output_row(&self, row: usize) -> &[f64] {
        let out = self.output();
        let m = out.len() / self.batch;
        &out[row * m..(row + 1) * m]
    }
}

/// Parameter-aligned gradients (or optimizer buffers of the same shape).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl GradientSet {
    pub fn zeros_like(network: &Network) -> Self {
        let weights = network
            .layers
            .iter()
            .map(|l| Tensor::zeros(l.dense.weights.dims()).expect("valid dims"))
            .collect();
        let biases = network
            .layers
            .iter()
            .map(|l| Tensor::zeros(l.dense.bias.dims()).expect("valid dims"))
            .collect();
        Self { weights, biases }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|t| t.data().iter().all(|&v| v == 0.0))
    }

    pub(crate) fn check_aligned(&self, network: &Network) -> Result<()> {
        let ok = self.weights.len() == network.layers.len()
            && self.biases.len() == network.layers.len()
            && network.layers.iter().enumerate().all(|(i, l)| {
                self.weights[i].dims() == l.dense.weights.dims() && self.biases[i].dims() == l.dense.bias.dims()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("gradient set does not match network parameters".into()))
        }
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"RSM1";

impl Network {
    /// Zero-initialized network. `layers` lists `(width, activation)` from
    /// the first hidden layer to the output layer.
    pub fn new(input_dim: usize, layers: &[(usize, Activation)]) -> Result<Self> {
        if input_dim == 0 || layers.is_empty() {
            return Err(Error::Config(
                "network needs an input dim and at least one layer".into(),
            ));
        }
        let mut prev = input_dim;
        let mut out = Vec::with_capacity(layers.len());
        for &(width, activation) in layers {
            if width == 0 {
                return Err(Error::Config("layer width must be positive".into()));
            }
            out.push(Layer {
                dense: DenseLayer::zeros(prev, width)?,
                activation,
            });
            prev = width;
        }
        Ok(Self { layers: out })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].dense.output_dim() != pair[1].dense.input_dim() {
                return Err(Error::Shape(format!(
                    "layer dims do not chain: {} -> {}",
                    pair[0].dense.output_dim(),
                    pair[1].dense.input_dim()
                )));
            }
        }
        for l in &layers {
            if l.dense.bias.dims() != [l.dense.output_dim()] {
                return Err(Error::Shape("bias length differs from layer width".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].dense.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").dense.output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.dense.weights.len() + l.dense.bias.len())
            .sum()
    }

    /// He initialization: weights ~ N(0, sqrt(2 / fan_in)), zero biases.
    pub fn he_init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for layer in &mut self.layers {
            let fan_in = layer.dense.input_dim() as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            for w in layer.dense.weights.data_mut() {
                *w = normal.sample(rng);
            }
            layer.dense.bias.data_mut().iter_mut().for_each(|b| *b = 0.0);
        }
    }

    /// Forward pass for a single sample.
    pub fn forward(&self, x: &Tensor) -> Result<ForwardCache> {
        if x.dims() != [self.input_dim()] {
            return Err(Error::Shape(format!(
                "input dims {:?}, network expects [{}]",
                x.dims(),
                self.input_dim()
            )));
        }
        self.forward_batch(x.data(), 1)
    }

    /// Forward pass over `batch` row-major samples.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<ForwardCache> {
        let n = self.input_dim();
        if batch == 0 || inputs.len() != batch * n {
            return Err(Error::Shape(format!(
                "batch of {batch} needs {} inputs, got {}",
                batch * n,
                inputs.len()
            )));
        }
        if let Some(pos) = inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite input at row {}, column {}",
                pos / n,
                pos % n
            )));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let prev: &[f64] = post.last().map_or(inputs, |v| v.as_slice());
            let (out_dim, in_dim) = (layer.dense.output_dim(), layer.dense.input_dim());
            let mut z = vec![0.0; batch * out_dim];
            // z = prev × Wᵀ
            gemm(
                batch,
                in_dim,
                out_dim,
                prev,
                (in_dim as isize, 1),
                layer.dense.weights.data(),
                (1, in_dim as isize),
                &mut z,
            );
            let bias = layer.dense.bias.data();
            for row in z.chunks_exact_mut(out_dim) {
                row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
            }
            let mut a = z.clone();
            for row in a.chunks_exact_mut(out_dim) {
                layer.activation.apply(row);
            }
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardCache {
            batch,
            input: inputs.to_vec(),
            pre,
            post,
        })
    }

    /// Network output `h_w(x)` for one sample.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let cache = self.forward(x)?;
        Tensor::vector(cache.output().to_vec())
    }

    /// Gradients of a scalar loss given `dL/d(output)` for every batch row.
    /// Returned gradients are summed over the batch.
    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64]) -> Result<GradientSet> {
        let batch = cache.batch;
        if cache.pre.len() != self.layers.len()
            || cache.input.len() != batch * self.input_dim()
            || self
                .layers
                .iter()
                .zip(&cache.pre)
                .any(|(l, z)| z.len() != batch * l.dense.output_dim())
        {
            return Err(Error::Shape("forward cache does not match this network".into()));
        }
        if d_output.len() != batch * self.output_dim() {
            return Err(Error::Shape(format!(
                "output gradient has {} values, expected {}",
                d_output.len(),
                batch * self.output_dim()
            )));
        }
        let mut grads = GradientSet::zeros_like(self);
        let mut upstream = d_output.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let (out_dim, in_dim) = (layer.dense.output_dim(), layer.dense.input_dim());
            let dz = activation_backward(layer.activation, &cache.pre[idx], &cache.post[idx], upstream, out_dim);
            let prev: &[f64] = if idx == 0 { &cache.input } else { &cache.post[idx - 1] };
            // dW = dzᵀ × prev
            gemm(
                out_dim,
                batch,
                in_dim,
                &dz,
                (1, out_dim as isize),
                prev,
                (in_dim as isize, 1),
                grads.weights[idx].data_mut(),
            );
            let db = grads.biases[idx].data_mut();
            for row in dz.chunks_exact(out_dim) {
                db.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
            }
            if idx > 0 {
                // d(prev) = dz × W
                let mut d_prev = vec![0.0; batch * in_dim];
                gemm(
                    batch,
                    out_dim,
                    in_dim,
                    &dz,
                    (out_dim as isize, 1),
                    layer.dense.weights.data(),
                    (in_dim as isize, 1),
                    &mut d_prev,
                );
                upstream = d_prev;
            } else {
                upstream = Vec::new();
            }
        }
        Ok(grads)
    }

    /// Name of the first parameter tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.layers.iter().enumerate().find_map(|(i, l)| {
            if !l.dense.weights.is_finite() {
                Some(format!("layer {i} weights"))
            } else if !l.dense.bias.is_finite() {
                Some(format!("layer {i} bias"))
            } else {
                None
            }
        })
    }

    /// Little-endian checkpoint: `RSM1`, layer count (u32), then per layer
    /// `out` (u32), `in` (u32), activation code (u8), the `out × in` weights
    /// and the `out` biases as f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(8 + self.parameter_count() * 8);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            buf.extend_from_slice(&(layer.dense.output_dim() as u32).to_le_bytes());
            buf.extend_from_slice(&(layer.dense.input_dim() as u32).to_le_bytes());
            buf.push(layer.activation.code());
            for v in layer.dense.weights.data().iter().chain(layer.dense.bias.data()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut cursor = ByteCursor { bytes, pos: 0, origin };
        if cursor.take(4)? != CHECKPOINT_MAGIC {
            return Err(cursor.error(0, "bad magic, expected RSM1"));
        }
        let count = cursor.u32()? as usize;
        if count == 0 {
            return Err(cursor.error(4, "checkpoint has no layers"));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let at = cursor.pos as u64;
            let out = cursor.u32()? as usize;
            let inp = cursor.u32()? as usize;
            if out == 0 || inp == 0 {
                return Err(cursor.error(at, "zero layer dimension"));
            }
            let code_at = cursor.pos as u64;
            let activation = Activation::from_code(cursor.take(1)?[0])
                .ok_or_else(|| cursor.error(code_at, "unknown activation code"))?;
            let weights = cursor.f64s(out * inp)?;
            let bias = cursor.f64s(out)?;
            layers.push(Layer {
                dense: DenseLayer {
                    weights: Tensor::matrix(out, inp, weights)?,
                    bias: Tensor::vector(bias)?,
                },
                activation,
            });
        }
        if cursor.pos != bytes.len() {
            return Err(cursor.error(cursor.pos as u64, "trailing bytes after last layer"));
        }
        Network::from_layers(layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn activation_backward(
    activation: Activation,
    pre: &[f64],
    post: &[f64],
    mut upstream: Vec<f64>,
    width: usize,
) -> Vec<f64> {
    match activation {
        Activation::Identity => upstream,
        Activation::Relu => {
            // Subgradient at 0 is 0.
            upstream.iter_mut().zip(pre).for_each(|(g, &z)| {
                if z <= 0.0 {
                    *g = 0.0
                }
            });
            upstream
        }
        Activation::Softmax => {
            // Full Jacobian-vector product: J_ij = p_i (δ_ij − p_j).
            for (g, p) in upstream.chunks_exact_mut(width).zip(post.chunks_exact(width)) {
                let dot: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
                g.iter_mut().zip(p).for_each(|(gj, &pj)| *gj = pj * (*gj - dot));
            }
            upstream
        }
    }
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl ByteCursor<'_> {
    fn error(&self, offset: u64, message: &str) -> Error {
        Error::Format {
            path: self.origin.to_path_buf(),
            offset,
            message: message.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(self.pos as u64, "unexpected end of checkpoint"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| self.error(self.pos as u64, "buffer size overflows"))?;
        let raw = self.take(len)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
