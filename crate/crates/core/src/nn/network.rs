use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::linalg::{matmul_ab, matmul_abt, matmul_atb, Matrix};
use crate::{Error, Result};

/// Negative-side slope used whenever a leaky ReLU is requested without one.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HiddenActivation {
    Relu,
    LeakyRelu(f64),
}

impl HiddenActivation {
    pub fn leaky() -> Self {
        HiddenActivation::LeakyRelu(DEFAULT_LEAKY_SLOPE)
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            HiddenActivation::Relu => z.max(0.0),
            HiddenActivation::LeakyRelu(s) => {
                if z > 0.0 {
                    z
                } else {
                    s * z
                }
            }
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            HiddenActivation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            HiddenActivation::LeakyRelu(s) => {
                if z > 0.0 {
                    1.0
                } else {
                    s
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Linear,
    Sigmoid,
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Affine layer `z = W x + b`, `W` row-major with shape `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Architecture("layer sizes must be >= 1".into()));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::Dimension {
                what: "layer weights",
                expected: in_dim * out_dim,
                got: weights.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(Error::Dimension {
                what: "layer bias",
                expected: out_dim,
                got: bias.len(),
            });
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
        })
    }

    /// Glorot-uniform weights, zero bias.
    fn glorot(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let weights = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    fn affine(&self, input: &[f64], rows: usize) -> Vec<f64> {
        let mut z = vec![0.0; rows * self.out_dim];
        matmul_abt(
            rows,
            self.in_dim,
            self.out_dim,
            input,
            &self.weights,
            &mut z,
        );
        for row in z.chunks_exact_mut(self.out_dim) {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        z
    }
}

/// Per-dimension affine normalization: `normalized = (x - mean) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean and standard deviation of each column; near-constant columns keep unit scale.
    pub fn fit<R: AsRef<[f64]>>(dim: usize, rows: impl IntoIterator<Item = R>) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sumsq = vec![0.0; dim];
        for r in rows {
            let r = r.as_ref();
            n += 1;
            for ((s, q), &x) in sum.iter_mut().zip(sumsq.iter_mut()).zip(r) {
                *s += x;
                *q += x * x;
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let scale = sumsq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / nf - m * m).max(0.0);
                let sd = var.sqrt();
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_identity(&self) -> bool {
        self.mean.iter().all(|&m| m == 0.0) && self.scale.iter().all(|&s| s == 1.0)
    }

    fn normalize_rows(&self, data: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = data.to_vec();
        for row in out.chunks_exact_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    fn denormalize_rows(&self, data: &mut [f64]) {
        let d = self.dim();
        for row in data.chunks_exact_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = *v * s + m;
            }
        }
    }
}

/// Gradient buffers with the same shapes as a network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|&g| g == 0.0)
    }
}

/// Values recorded by a forward pass and consumed by the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    rows: usize,
    /// Input to each layer (after input normalization for layer 0).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// Dense feed-forward network with input/output normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Dense>,
    hidden: HiddenActivation,
    output: OutputActivation,
    frozen: bool,
    input_norm: Normalization,
    output_norm: Normalization,
}

impl Network {
    /// Builds a network with Glorot-uniform weights and zero biases.
    ///
    /// `layer_sizes` lists the input width, every hidden width, then the output width.
    pub fn new(
        layer_sizes: &[usize],
        hidden: HiddenActivation,
        output: OutputActivation,
        seed: u64,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Architecture(format!(
                "need at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Architecture(format!(
                "all layer sizes must be >= 1, got {layer_sizes:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| Dense::glorot(w[0], w[1], &mut rng))
            .collect();
        Self::from_layers(layers, hidden, output)
    }

    pub fn from_layers(
        layers: Vec<Dense>,
        hidden: HiddenActivation,
        output: OutputActivation,
    ) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Architecture("network needs at least one layer".into()))?;
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::Architecture(format!(
                    "layer output {} does not chain into layer input {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        if let HiddenActivation::LeakyRelu(s) = hidden {
            if !s.is_finite() {
                return Err(Error::Architecture("leaky slope must be finite".into()));
            }
        }
        let in_dim = first.in_dim;
        let out_dim = layers.last().unwrap().out_dim;
        Ok(Self {
            layers,
            hidden,
            output,
            frozen: false,
            input_norm: Normalization::identity(in_dim),
            output_norm: Normalization::identity(out_dim),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.out_dim));
        s
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Direct parameter access, e.g. for finite-difference checks.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn hidden_activation(&self) -> HiddenActivation {
        self.hidden
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_norm(&self) -> &Normalization {
        &self.input_norm
    }

    pub fn output_norm(&self) -> &Normalization {
        &self.output_norm
    }

    pub fn set_input_norm(&mut self, norm: Normalization) -> Result<()> {
        if norm.dim() != self.input_dim() || norm.scale.len() != norm.dim() {
            return Err(Error::Dimension {
                what: "input normalization",
                expected: self.input_dim(),
                got: norm.dim(),
            });
        }
        self.input_norm = norm;
        Ok(())
    }

    pub fn set_output_norm(&mut self, norm: Normalization) -> Result<()> {
        if norm.dim() != self.output_dim() || norm.scale.len() != norm.dim() {
            return Err(Error::Dimension {
                what: "output normalization",
                expected: self.output_dim(),
                got: norm.dim(),
            });
        }
        self.output_norm = norm;
        Ok(())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// SHA-256 over the little-endian bytes of every weight and bias.
    pub fn parameter_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.bias) {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Checks the layer sizes against an expected architecture.
    pub fn check_architecture(&self, expected: &[usize]) -> Result<()> {
        let got = self.layer_sizes();
        if got != expected {
            return Err(Error::Architecture(format!(
                "layer sizes {got:?} do not match expected {expected:?}"
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Dimension {
                what: "network input width",
                expected: self.input_dim(),
                got: x.cols(),
            });
        }
        Ok(())
    }

    fn activate(&self, layer: usize, z: &mut [f64]) {
        if layer + 1 < self.layers.len() {
            let act = self.hidden;
            z.iter_mut().for_each(|v| *v = act.apply(*v));
        } else if self.output == OutputActivation::Sigmoid {
            z.iter_mut().for_each(|v| *v = sigmoid(*v));
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let rows = x.rows();
        let mut h = self.input_norm.normalize_rows(x.data());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(&h, rows);
            self.activate(i, &mut z);
            h = z;
        }
        self.output_norm.denormalize_rows(&mut h);
        Matrix::from_vec(rows, self.output_dim(), h)
    }

    /// Forward pass that also records what [`Network::backward`] needs.
    pub fn forward_traced(&self, x: &Matrix) -> Result<(Matrix, ForwardTrace)> {
        self.check_input(x)?;
        let rows = x.rows();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = self.input_norm.normalize_rows(x.data());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&h, rows);
            let mut a = z.clone();
            self.activate(i, &mut a);
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        self.output_norm.denormalize_rows(&mut h);
        let out = Matrix::from_vec(rows, self.output_dim(), h)?;
        Ok((out, ForwardTrace { rows, inputs, pre }))
    }

    fn check_trace(&self, trace: &ForwardTrace, upstream: &Matrix) -> Result<()> {
        let consistent = trace.pre.len() == self.layers.len()
            && trace.inputs.len() == self.layers.len()
            && trace.rows == upstream.rows()
            && self
                .layers
                .iter()
                .zip(&trace.pre)
                .all(|(l, z)| z.len() == trace.rows * l.out_dim);
        if !consistent {
            return Err(Error::MissingForwardRecord);
        }
        if upstream.cols() != self.output_dim() {
            return Err(Error::Dimension {
                what: "upstream gradient width",
                expected: self.output_dim(),
                got: upstream.cols(),
            });
        }
        Ok(())
    }

    /// Reverse-mode gradients of `sum(upstream ⊙ output)` for the traced batch.
    ///
    /// Parameter gradients are always produced, frozen or not; freezing only blocks updates.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &Matrix) -> Result<(Gradients, Matrix)> {
        let (grads, input) = self.backward_impl(trace, upstream, true, true)?;
        Ok((grads.expect("requested"), input.expect("requested")))
    }

    /// Parameter gradients only; skips the input-gradient product of the first layer.
    pub fn backward_params(&self, trace: &ForwardTrace, upstream: &Matrix) -> Result<Gradients> {
        Ok(self
            .backward_impl(trace, upstream, true, false)?
            .0
            .expect("requested"))
    }

    /// Input gradient only, leaving parameters and their gradients untouched.
    pub fn input_gradient(&self, trace: &ForwardTrace, upstream: &Matrix) -> Result<Matrix> {
        Ok(self
            .backward_impl(trace, upstream, false, true)?
            .1
            .expect("requested"))
    }

    fn backward_impl(
        &self,
        trace: &ForwardTrace,
        upstream: &Matrix,
        want_params: bool,
        want_input: bool,
    ) -> Result<(Option<Gradients>, Option<Matrix>)> {
        self.check_trace(trace, upstream)?;
        let rows = trace.rows;
        let n_layers = self.layers.len();

        let out_dim = self.output_dim();
        let mut g = upstream.data().to_vec();
        for row in g.chunks_exact_mut(out_dim) {
            for (v, s) in row.iter_mut().zip(&self.output_norm.scale) {
                *v *= s;
            }
        }

        let mut grads = want_params.then(|| Gradients::zeros_like(self));
        for li in (0..n_layers).rev() {
            let layer = &self.layers[li];
            let z = &trace.pre[li];
            // dL/dz
            if li + 1 == n_layers {
                if self.output == OutputActivation::Sigmoid {
                    for (gv, &zv) in g.iter_mut().zip(z) {
                        let s = sigmoid(zv);
                        *gv *= s * (1.0 - s);
                    }
                }
            } else {
                let act = self.hidden;
                for (gv, &zv) in g.iter_mut().zip(z) {
                    *gv *= act.derivative(zv);
                }
            }
            if let Some(grads) = grads.as_mut() {
                let lg = &mut grads.layers[li];
                matmul_atb(
                    layer.out_dim,
                    rows,
                    layer.in_dim,
                    &g,
                    &trace.inputs[li],
                    &mut lg.weights,
                );
                for row in g.chunks_exact(layer.out_dim) {
                    for (b, v) in lg.bias.iter_mut().zip(row) {
                        *b += v;
                    }
                }
            }
            if li > 0 || want_input {
                let mut prev = vec![0.0; rows * layer.in_dim];
                matmul_ab(
                    rows,
                    layer.out_dim,
                    layer.in_dim,
                    &g,
                    &layer.weights,
                    &mut prev,
                );
                g = prev;
            }
        }

        let input = if want_input {
            let in_dim = self.input_dim();
            for row in g.chunks_exact_mut(in_dim) {
                for (v, s) in row.iter_mut().zip(&self.input_norm.scale) {
                    *v /= s;
                }
            }
            Some(Matrix::from_vec(rows, in_dim, g)?)
        } else {
            None
        };
        Ok((grads, input))
    }
}
