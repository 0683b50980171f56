//! Test-side oracles shared by the integration test targets.

#![allow(dead_code)]

use fibergan::nncore::{self, Activation, Matrix, MlpParams, MlpSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_l2(a: &[fibergan::Complex64], b: &[fibergan::Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

fn act(a: Activation, z: f64, slope: f64) -> f64 {
    match a {
        Activation::Identity => z,
        Activation::LeakyRelu => {
            if z > 0.0 {
                z
            } else {
                slope * z
            }
        }
        Activation::Tanh => z.tanh(),
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
    }
}

/// Plain-loop network evaluator for central finite differences. A perturbed
/// parameter only touches one pre-activation of its layer, so the next layer
/// is updated with a rank-1 correction and only later layers are recomputed.
pub struct FdOracle<'a> {
    spec: &'a MlpSpec,
    params: &'a MlpParams,
    inputs: Vec<Vec<f64>>,
    coeffs: Vec<Vec<f64>>,
    /// Per sample, per layer: pre-activations and activations.
    zs: Vec<Vec<Vec<f64>>>,
    acts: Vec<Vec<Vec<f64>>>,
}

pub struct FdResult {
    pub value: f64,
    /// A leaky-ReLU pre-activation changed sign in either perturbed run.
    pub crosses_kink: bool,
}

impl<'a> FdOracle<'a> {
    pub fn new(spec: &'a MlpSpec, params: &'a MlpParams, inputs: Vec<Vec<f64>>, coeffs: Vec<Vec<f64>>) -> Self {
        let mut zs = Vec::new();
        let mut acts = Vec::new();
        for x in &inputs {
            let (mut zl, mut al) = (Vec::new(), Vec::new());
            let mut a = x.clone();
            for (layer, &f) in params.layers.iter().zip(&spec.activations) {
                let z: Vec<f64> = (0..layer.out_dim)
                    .map(|o| {
                        layer.bias[o] + (0..layer.in_dim).map(|i| layer.weights[o * layer.in_dim + i] * a[i]).sum::<f64>()
                    })
                    .collect();
                a = z.iter().map(|&v| act(f, v, spec.leaky_slope)).collect();
                zl.push(z);
                al.push(a.clone());
            }
            zs.push(zl);
            acts.push(al);
        }
        Self {
            spec,
            params,
            inputs,
            coeffs,
            zs,
            acts,
        }
    }

    /// Loss `Σ c·output` at the base parameters.
    pub fn loss(&self) -> f64 {
        self.acts
            .iter()
            .zip(&self.coeffs)
            .map(|(a, c)| a.last().unwrap().iter().zip(c).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    /// Loss with parameter `(layer, out, col)` shifted by `delta`; `col == in_dim`
    /// addresses the bias.
    fn shifted(&self, layer: usize, out: usize, col: usize, delta: f64) -> (f64, bool) {
        let slope = self.spec.leaky_slope;
        let acts_spec = &self.spec.activations;
        let n_layers = self.params.layers.len();
        let mut total = 0.0;
        let mut kink = false;
        for s in 0..self.inputs.len() {
            let input_val = if col == self.params.layers[layer].in_dim {
                1.0
            } else if layer == 0 {
                self.inputs[s][col]
            } else {
                self.acts[s][layer - 1][col]
            };
            let z_old = self.zs[s][layer][out];
            let z_new = z_old + delta * input_val;
            let leaky = |l: usize| acts_spec[l] == Activation::LeakyRelu;
            if leaky(layer) && (z_old > 0.0) != (z_new > 0.0) {
                kink = true;
            }
            let mut a = self.acts[s][layer].clone();
            a[out] = act(acts_spec[layer], z_new, slope);
            if layer + 1 < n_layers {
                let next = &self.params.layers[layer + 1];
                let da = a[out] - self.acts[s][layer][out];
                let z: Vec<f64> = (0..next.out_dim)
                    .map(|o| self.zs[s][layer + 1][o] + next.weights[o * next.in_dim + out] * da)
                    .collect();
                if leaky(layer + 1) && z.iter().zip(&self.zs[s][layer + 1]).any(|(n, o)| (*n > 0.0) != (*o > 0.0)) {
                    kink = true;
                }
                a = z.iter().map(|&v| act(acts_spec[layer + 1], v, slope)).collect();
                for l in layer + 2..n_layers {
                    let w = &self.params.layers[l];
                    let z: Vec<f64> = (0..w.out_dim)
                        .map(|o| w.bias[o] + (0..w.in_dim).map(|i| w.weights[o * w.in_dim + i] * a[i]).sum::<f64>())
                        .collect();
                    if leaky(l) && z.iter().zip(&self.zs[s][l]).any(|(n, o)| (*n > 0.0) != (*o > 0.0)) {
                        kink = true;
                    }
                    a = z.iter().map(|&v| act(acts_spec[l], v, slope)).collect();
                }
            }
            total += a.iter().zip(&self.coeffs[s]).map(|(x, y)| x * y).sum::<f64>();
        }
        (total, kink)
    }

    /// Central difference `(L(p+h) − L(p−h)) / 2h` for one parameter.
    pub fn derivative(&self, layer: usize, out: usize, col: usize, h: f64) -> FdResult {
        let (up, k1) = self.shifted(layer, out, col, h);
        let (down, k2) = self.shifted(layer, out, col, -h);
        FdResult {
            value: (up - down) / (2.0 * h),
            crosses_kink: k1 || k2,
        }
    }
}

/// Relative disagreement with a floor guarding gradients that are zero up to rounding.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

pub struct GradCheck {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub worst: f64,
    pub failures: usize,
}

/// Compares every parameter gradient from `nncore::backward` against the
/// finite-difference oracle at random weights, biases and inputs.
pub fn check_all_parameters(spec: &MlpSpec, seed: u64, batch: usize, tol: f64) -> GradCheck {
    let mut r = rng(seed);
    let mut params = nncore::init_params(spec, seed).unwrap();
    for layer in &mut params.layers {
        for b in &mut layer.bias {
            *b = r.random_range(-0.1..0.1);
        }
    }
    let inputs: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..spec.input_width()).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let coeffs: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..spec.output_width()).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let x = Matrix::from_rows(&inputs).unwrap();
    let (_, cache) = nncore::forward(&params, spec, &x).unwrap();
    let grads = nncore::backward(&params, spec, &cache, &Matrix::from_rows(&coeffs).unwrap()).unwrap();
    let oracle = FdOracle::new(spec, &params, inputs, coeffs);
    let mut out = GradCheck {
        checked: 0,
        skipped_kinks: 0,
        worst: 0.0,
        failures: 0,
    };
    for (l, g) in grads.params.layers.iter().enumerate() {
        for o in 0..g.out_dim {
            for col in 0..=g.in_dim {
                let analytic = if col == g.in_dim { g.bias[o] } else { g.weights[o * g.in_dim + col] };
                let fd = oracle.derivative(l, o, col, 1e-6);
                if fd.crosses_kink {
                    out.skipped_kinks += 1;
                    continue;
                }
                let d = rel_diff(analytic, fd.value);
                out.worst = out.worst.max(d);
                if d > tol {
                    out.failures += 1;
                }
                out.checked += 1;
            }
        }
    }
    out
}
