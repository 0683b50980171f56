//! Dense multilayer perceptrons with hand-written reverse-mode gradients.
//!
//! Batches are row-major [`Matrix`] values, one sample per row. Layer weights
//! are stored `out × in` row-major, so a layer computes `Z = A·Wᵀ + b`.
//! Gradients returned by [`backward`] are sums over the batch; mean losses
//! fold the `1/batch` factor into the output gradient.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{len_u32, LeReader, LeWriter};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    LeakyRelu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::LeakyRelu => 1,
            Activation::Tanh => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::LeakyRelu),
            2 => Ok(Activation::Tanh),
            3 => Ok(Activation::Sigmoid),
            t => Err(Error::Format(format!("unknown activation tag {t}"))),
        }
    }

    #[inline]
    pub fn apply(self, z: f64, slope: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative given the pre-activation `z` and the activation output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64, slope: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub leaky_slope: f64,
}

impl MlpSpec {
    pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

    pub fn new(layer_widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        let spec = Self {
            layer_widths,
            activations,
            leaky_slope: Self::DEFAULT_LEAKY_SLOPE,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_leaky_slope(mut self, slope: f64) -> Self {
        self.leaky_slope = slope;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::Config("an MLP needs at least input and output widths".into()));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        if self.activations.len() != self.layer_widths.len() - 1 {
            return Err(Error::Config(format!(
                "{} activations for {} layers",
                self.activations.len(),
                self.layer_widths.len() - 1
            )));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::Config("leaky slope must be finite".into()));
        }
        Ok(())
    }

    /// Reference generator: input → 288 → 256 → 64 → output, leaky ×3 then tanh.
    pub fn generator(input: usize, output: usize) -> Self {
        use Activation::*;
        Self::new(vec![input, 288, 256, 64, output], vec![LeakyRelu, LeakyRelu, LeakyRelu, Tanh])
            .expect("static generator shape")
    }

    /// Reference discriminator: input → 256 → 256 → 64 → 1, leaky ×3 then sigmoid.
    pub fn discriminator(input: usize) -> Self {
        use Activation::*;
        Self::new(vec![input, 256, 256, 64, 1], vec![LeakyRelu, LeakyRelu, LeakyRelu, Sigmoid])
            .expect("static discriminator shape")
    }

    pub fn layer_count(&self) -> usize {
        self.activations.len()
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }
}

/// Row-major dense matrix; rows are batch items.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InputShape(format!(
                "{} values for a {rows}×{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::InputShape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Rows `idx` gathered into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Column-wise concatenation `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::InputShape(format!(
                "cannot concatenate {} rows with {} rows",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Self {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Columns `[start, end)` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Self {
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Self {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Row-wise concatenation.
    pub fn vcat(&self, other: &Matrix) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::InputShape("column counts differ".into()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }
}

/// `c ← alpha·op(a)·op(b) + beta·c` over strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index matrixmultiply touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim × in_dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.in_dim + inp]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self {
            layers: spec
                .layer_widths
                .windows(2)
                .map(|w| Dense::zeros(w[0], w[1]))
                .collect(),
        }
    }

    pub fn check(&self, spec: &MlpSpec) -> Result<()> {
        if self.layers.len() != spec.layer_count() {
            return Err(Error::InputShape(format!(
                "{} parameter layers for a {}-layer spec",
                self.layers.len(),
                spec.layer_count()
            )));
        }
        for (l, (layer, w)) in self.layers.iter().zip(spec.layer_widths.windows(2)).enumerate() {
            if layer.in_dim != w[0]
                || layer.out_dim != w[1]
                || layer.weights.len() != w[0] * w[1]
                || layer.bias.len() != w[1]
            {
                return Err(Error::InputShape(format!("layer {l} shape disagrees with spec")));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Glorot-uniform weights, zero biases, deterministic in `seed`.
pub fn init_params(spec: &MlpSpec, seed: u64) -> Result<MlpParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = MlpParams::zeros(spec);
    for layer in &mut params.layers {
        let limit = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
        for w in &mut layer.weights {
            *w = rng.random_range(-limit..limit);
        }
    }
    Ok(params)
}

/// Per-layer inputs and pre-activations saved by [`forward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `inputs[l]` is the input to layer `l`; the final entry is the network output.
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.inputs.last().expect("cache holds the output")
    }

    pub fn pre_activations(&self, layer: usize) -> &Matrix {
        &self.pre[layer]
    }
}

fn affine(layer: &Dense, input: &Matrix) -> Matrix {
    let batch = input.rows();
    let mut z = Matrix::zeros(batch, layer.out_dim);
    for i in 0..batch {
        z.row_mut(i).copy_from_slice(&layer.bias);
    }
    // Wᵀ viewed through strides: element (i, o) lives at o·in + i.
    gemm(
        batch,
        layer.in_dim,
        layer.out_dim,
        1.0,
        input.as_slice(),
        (input.cols(), 1),
        &layer.weights,
        (1, layer.in_dim),
        1.0,
        z.as_mut_slice(),
    );
    z
}

fn check_input(spec: &MlpSpec, params: &MlpParams, input: &Matrix) -> Result<()> {
    params.check(spec)?;
    if input.cols() != spec.input_width() {
        return Err(Error::InputShape(format!(
            "input width {} but network expects {}",
            input.cols(),
            spec.input_width()
        )));
    }
    Ok(())
}

/// Forward pass keeping what [`backward`] needs.
pub fn forward(params: &MlpParams, spec: &MlpSpec, input: &Matrix) -> Result<(Matrix, ForwardCache)> {
    check_input(spec, params, input)?;
    let mut inputs = Vec::with_capacity(spec.layer_count() + 1);
    let mut pre = Vec::with_capacity(spec.layer_count());
    inputs.push(input.clone());
    for (layer, &act) in params.layers.iter().zip(&spec.activations) {
        let z = affine(layer, inputs.last().expect("non-empty"));
        let mut a = z.clone();
        a.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v, spec.leaky_slope));
        pre.push(z);
        inputs.push(a);
    }
    let out = inputs.last().expect("non-empty").clone();
    Ok((out, ForwardCache { inputs, pre }))
}

/// Forward pass without a cache.
pub fn predict(params: &MlpParams, spec: &MlpSpec, input: &Matrix) -> Result<Matrix> {
    check_input(spec, params, input)?;
    let mut a = input.clone();
    for (layer, &act) in params.layers.iter().zip(&spec.activations) {
        a = affine(layer, &a);
        a.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v, spec.leaky_slope));
    }
    Ok(a)
}

#[derive(Clone, Debug)]
pub struct Gradients {
    /// Same shapes as the network parameters; empty layers when not requested.
    pub params: MlpParams,
    /// Gradient with respect to the network input; `0×0` when not requested.
    pub input: Matrix,
}

/// Exact reverse-mode gradients for parameters and input.
pub fn backward(params: &MlpParams, spec: &MlpSpec, cache: &ForwardCache, output_grad: &Matrix) -> Result<Gradients> {
    backward_with(params, spec, cache, output_grad, true, true)
}

/// [`backward`] with the parameter and input gradients individually optional.
pub fn backward_with(
    params: &MlpParams,
    spec: &MlpSpec,
    cache: &ForwardCache,
    output_grad: &Matrix,
    want_params: bool,
    want_input: bool,
) -> Result<Gradients> {
    params.check(spec)?;
    let out = cache.output();
    if cache.pre.len() != spec.layer_count() || output_grad.rows() != out.rows() || output_grad.cols() != out.cols() {
        return Err(Error::InputShape("output gradient does not match the forward cache".into()));
    }
    let batch = out.rows();
    let mut grads = MlpParams {
        layers: Vec::with_capacity(spec.layer_count()),
    };
    let mut delta = output_grad.clone();
    let mut input_grad = Matrix::zeros(0, 0);
    for l in (0..spec.layer_count()).rev() {
        let layer = &params.layers[l];
        let act = spec.activations[l];
        let (z, a) = (&cache.pre[l], &cache.inputs[l + 1]);
        for ((d, &zv), &av) in delta.as_mut_slice().iter_mut().zip(z.as_slice()).zip(a.as_slice()) {
            *d *= act.derivative(zv, av, spec.leaky_slope);
        }
        if want_params {
            let x = &cache.inputs[l];
            let mut g = Dense::zeros(layer.in_dim, layer.out_dim);
            // dW = δᵀ·X
            gemm(
                layer.out_dim,
                batch,
                layer.in_dim,
                1.0,
                delta.as_slice(),
                (1, layer.out_dim),
                x.as_slice(),
                (x.cols(), 1),
                0.0,
                &mut g.weights,
            );
            for i in 0..batch {
                for (b, d) in g.bias.iter_mut().zip(delta.row(i)) {
                    *b += d;
                }
            }
            grads.layers.push(g);
        }
        if l > 0 || want_input {
            // δ_prev = δ·W
            let mut prev = Matrix::zeros(batch, layer.in_dim);
            gemm(
                batch,
                layer.out_dim,
                layer.in_dim,
                1.0,
                delta.as_slice(),
                (layer.out_dim, 1),
                &layer.weights,
                (layer.in_dim, 1),
                0.0,
                prev.as_mut_slice(),
            );
            if l == 0 {
                input_grad = prev;
                break;
            }
            delta = prev;
        } else {
            break;
        }
    }
    grads.layers.reverse();
    Ok(Gradients {
        params: grads,
        input: input_grad,
    })
}

const LOG_CLAMP: f64 = 1e-12;

/// Binary cross-entropy of one prediction and its derivative with respect to `pred`.
pub fn bce(pred: f64, label: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&pred) {
        return Err(Error::Numeric(format!("BCE prediction {pred} outside [0, 1]")));
    }
    let p = pred.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
    let q = 1.0 - p;
    let loss = -(label * p.ln() + (1.0 - label) * q.ln());
    let grad = -label / p + (1.0 - label) / q;
    Ok((loss, grad))
}

/// Mean BCE over a batch; gradients carry the `1/n`.
pub fn bce_loss(preds: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::InputShape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let n = preds.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    for (&p, &y) in preds.iter().zip(labels) {
        let (l, g) = bce(p, y)?;
        total += l;
        grads.push(g / n);
    }
    Ok((total / n, grads))
}

/// Mean squared error over all components; gradient `2(pred − target)/n`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::InputShape(format!(
            "prediction width {} vs target width {}",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: MlpParams,
    v: MlpParams,
}

impl AdamState {
    pub fn new(spec: &MlpSpec, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: MlpParams::zeros(spec),
            v: MlpParams::zeros(spec),
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, state: &mut AdamState) -> Result<()> {
    let same_shape = |a: &MlpParams, b: &MlpParams| {
        a.layers.len() == b.layers.len()
            && a.layers
                .iter()
                .zip(&b.layers)
                .all(|(x, y)| x.weights.len() == y.weights.len() && x.bias.len() == y.bias.len())
    };
    if !same_shape(params, grads) || !same_shape(params, &state.m) {
        return Err(Error::InputShape("Adam parameter, gradient and state shapes differ".into()));
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, epsilon } = state.config;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for ((p, g), (m, v)) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.m.layers.iter_mut().zip(state.v.layers.iter_mut()))
    {
        let values = p.weights.iter_mut().chain(p.bias.iter_mut());
        let gs = g.weights.iter().chain(&g.bias);
        let ms = m.weights.iter_mut().chain(m.bias.iter_mut());
        let vs = v.weights.iter_mut().chain(v.bias.iter_mut());
        for (((p, &g), m), v) in values.zip(gs).zip(ms).zip(vs) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
        }
    }
    Ok(())
}

/// Writes `layer count, (in, out, tag)…, leaky slope, weights…, biases…` for one network.
/// An absent network is written as a bare zero layer count.
pub(crate) fn write_network<W: Write>(w: &mut LeWriter<W>, net: Option<(&MlpSpec, &MlpParams)>) -> Result<()> {
    let Some((spec, params)) = net else {
        return w.u32(0);
    };
    params.check(spec)?;
    w.u32(len_u32(spec.layer_count())?)?;
    for (layer, act) in params.layers.iter().zip(&spec.activations) {
        w.u32(len_u32(layer.in_dim)?)?;
        w.u32(len_u32(layer.out_dim)?)?;
        w.u8(act.tag())?;
    }
    w.f64(spec.leaky_slope)?;
    for layer in &params.layers {
        w.f64s(&layer.weights)?;
        w.f64s(&layer.bias)?;
    }
    Ok(())
}

pub(crate) fn read_network<R: Read>(r: &mut LeReader<R>) -> Result<Option<(MlpSpec, MlpParams)>> {
    let n = r.u32()? as usize;
    if n == 0 {
        return Ok(None);
    }
    if n > 64 {
        return Err(Error::Format(format!("implausible layer count {n}")));
    }
    let mut widths = Vec::with_capacity(n + 1);
    let mut acts = Vec::with_capacity(n);
    for l in 0..n {
        let (i, o) = (r.u32()? as usize, r.u32()? as usize);
        acts.push(Activation::from_tag(r.u8()?)?);
        if l == 0 {
            widths.push(i);
        } else if widths[l] != i {
            return Err(Error::Format(format!("layer {l} input width {i} does not chain")));
        }
        if i == 0 || o == 0 || i.saturating_mul(o) > 1 << 26 {
            return Err(Error::Format(format!("implausible layer {l} shape {o}×{i}")));
        }
        widths.push(o);
    }
    let slope = r.f64()?;
    let spec = MlpSpec {
        layer_widths: widths,
        activations: acts,
        leaky_slope: slope,
    };
    spec.validate().map_err(|e| Error::Format(e.to_string()))?;
    let mut params = MlpParams::zeros(&spec);
    for layer in &mut params.layers {
        layer.weights = r.f64s(layer.weights.len())?;
        layer.bias = r.f64s(layer.bias.len())?;
    }
    Ok(Some((spec, params)))
}
