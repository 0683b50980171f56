//! Ground-truth fiber channel: symmetric split-step Fourier solution of the
//! scalar NLSE with chromatic dispersion, self-phase modulation and
//! attenuation, followed by optional receiver-side AWGN.
//!
//! Each step of length `h` applies `D(h/2) N(h) D(h/2)`. Adjacent half
//! dispersion steps are fused into one frequency-domain multiply, so a run of
//! `n` steps costs `n + 1` FFT pairs. Boundaries are periodic.

pub mod fft;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::sigproc::ComplexSignal;

pub use fft::{fft, ifft, FftPlan};

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiberParams {
    pub length_km: f64,
    pub step_km: f64,
    pub dispersion_ps_nm_km: f64,
    pub gamma_per_w_km: f64,
    pub alpha_db_km: f64,
    pub wavelength_nm: f64,
}

impl Default for FiberParams {
    fn default() -> Self {
        Self {
            length_km: 0.0,
            step_km: 0.01,
            dispersion_ps_nm_km: 16.75,
            gamma_per_w_km: 1.3,
            alpha_db_km: 0.2,
            wavelength_nm: 1550.0,
        }
    }
}

impl FiberParams {
    pub fn with_length(mut self, length_km: f64) -> Self {
        self.length_km = length_km;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("invalid fiber parameters: {what}")));
        if !(self.length_km.is_finite() && self.length_km >= 0.0) {
            return bad("length must be >= 0");
        }
        if !(self.step_km.is_finite() && self.step_km > 0.0) {
            return bad("step must be > 0");
        }
        if self.length_km > 0.0 && self.step_km > self.length_km {
            return bad("step exceeds length");
        }
        if !self.dispersion_ps_nm_km.is_finite() {
            return bad("dispersion must be finite");
        }
        if !(self.gamma_per_w_km.is_finite() && self.gamma_per_w_km >= 0.0) {
            return bad("gamma must be >= 0");
        }
        if !(self.alpha_db_km.is_finite() && self.alpha_db_km >= 0.0) {
            return bad("attenuation must be >= 0");
        }
        if !(self.wavelength_nm.is_finite() && self.wavelength_nm > 0.0) {
            return bad("wavelength must be > 0");
        }
        Ok(())
    }

    /// Group-velocity dispersion in s²/m.
    pub fn beta2(&self) -> f64 {
        beta2_from_dispersion(self.dispersion_ps_nm_km, self.wavelength_nm)
    }

    /// Kerr coefficient in 1/(W·m).
    pub fn gamma_per_w_m(&self) -> f64 {
        self.gamma_per_w_km * 1e-3
    }

    /// Power attenuation coefficient in 1/m.
    pub fn alpha_per_m(&self) -> f64 {
        self.alpha_db_km * std::f64::consts::LN_10 / 10.0 * 1e-3
    }

    pub fn length_m(&self) -> f64 {
        self.length_km * 1e3
    }

    /// Step lengths in metres: full steps plus a possibly short final step.
    pub fn step_schedule_m(&self) -> Vec<f64> {
        step_schedule(self.length_km, self.step_km)
    }

    pub fn step_count(&self) -> usize {
        step_count(self.length_km, self.step_km)
    }
}

pub(crate) fn step_count(length_km: f64, step_km: f64) -> usize {
    if length_km <= 0.0 {
        return 0;
    }
    (length_km / step_km - 1e-9).ceil().max(1.0) as usize
}

/// `ceil(L/h)` steps of `h`, the last one shortened to land exactly on `L` (metres out).
pub(crate) fn step_schedule(length_km: f64, step_km: f64) -> Vec<f64> {
    let n = step_count(length_km, step_km);
    if n == 0 {
        return Vec::new();
    }
    let mut steps = vec![step_km * 1e3; n];
    steps[n - 1] = (length_km - (n - 1) as f64 * step_km) * 1e3;
    steps
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            snr_db: 26.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn off() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::Config(format!("invalid SNR {}", self.snr_db)));
        }
        Ok(())
    }
}

/// `β2 = −D·λ²/(2πc)` with D in ps/(nm·km), λ in nm; result in s²/m.
pub fn beta2_from_dispersion(dispersion_ps_nm_km: f64, wavelength_nm: f64) -> f64 {
    let d_si = dispersion_ps_nm_km * 1e-6; // s/m²
    let lambda = wavelength_nm * 1e-9;
    -d_si * lambda * lambda / (2.0 * PI * SPEED_OF_LIGHT_M_S)
}

/// Angular frequency of each FFT bin, in rad/s, in standard FFT order.
pub fn angular_frequencies(n: usize, sample_rate_hz: f64) -> Vec<f64> {
    let df = sample_rate_hz / n as f64;
    (0..n)
        .map(|k| {
            let k = if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 };
            2.0 * PI * k * df
        })
        .collect()
}

/// FFT plan plus cached dispersion phasors for one length, sample rate and β2.
pub(crate) struct SplitStepEngine {
    plan: FftPlan,
    omega_sq: Vec<f64>,
    beta2: f64,
    phasors: Vec<(u64, Vec<Complex64>)>,
}

impl SplitStepEngine {
    pub fn new(n: usize, sample_rate_hz: f64, beta2: f64) -> Result<Self> {
        let plan = FftPlan::new(n)?;
        let omega_sq = angular_frequencies(n, sample_rate_hz)
            .into_iter()
            .map(|w| w * w)
            .collect();
        Ok(Self {
            plan,
            omega_sq,
            beta2,
            phasors: Vec::new(),
        })
    }

    /// Multiplies a spectrum by `exp(i·(β2/2)·ω²·dz)`.
    fn disperse_spectrum(&mut self, spectrum: &mut [Complex64], dz_m: f64) {
        let key = dz_m.to_bits();
        let idx = match self.phasors.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                let half_b2 = 0.5 * self.beta2 * dz_m;
                let p = self
                    .omega_sq
                    .iter()
                    .map(|&w2| Complex64::from_polar(1.0, half_b2 * w2))
                    .collect();
                self.phasors.push((key, p));
                self.phasors.len() - 1
            }
        };
        for (x, p) in spectrum.iter_mut().zip(&self.phasors[idx].1) {
            *x *= p;
        }
    }

    pub fn disperse(&mut self, field: &mut [Complex64], dz_m: f64) {
        self.plan.forward(field);
        self.disperse_spectrum(field, dz_m);
        self.plan.inverse(field);
    }

    /// Symmetric split-step over `steps` (metres), `nonlinear(field, h)` for the
    /// pointwise sub-step of each step.
    pub fn run<F>(&mut self, field: &mut [Complex64], steps: &[f64], mut nonlinear: F)
    where
        F: FnMut(&mut [Complex64], f64),
    {
        let Some(&first) = steps.first() else {
            return;
        };
        self.plan.forward(field);
        self.disperse_spectrum(field, 0.5 * first);
        for (i, &h) in steps.iter().enumerate() {
            self.plan.inverse(field);
            nonlinear(field, h);
            self.plan.forward(field);
            let next = match steps.get(i + 1) {
                Some(&h_next) => 0.5 * (h + h_next),
                None => 0.5 * h,
            };
            self.disperse_spectrum(field, next);
        }
        self.plan.inverse(field);
    }
}

/// Effective nonlinear length of a step with power loss `alpha` (1/m).
pub(crate) fn effective_length(alpha_per_m: f64, dz_m: f64) -> f64 {
    if alpha_per_m == 0.0 {
        dz_m
    } else {
        -(-alpha_per_m * dz_m).exp_m1() / alpha_per_m
    }
}

/// Pointwise SPM rotation on `|A|²` at step entry, then field attenuation `e^{−α·dz/2}`.
pub(crate) fn apply_nonlinear(field: &mut [Complex64], gamma_per_w_m: f64, dz_m: f64, alpha_per_m: f64) {
    let k = gamma_per_w_m * effective_length(alpha_per_m, dz_m);
    let loss = (-0.5 * alpha_per_m * dz_m).exp();
    for a in field.iter_mut() {
        *a *= Complex64::from_polar(loss, k * a.norm_sqr());
    }
}

/// Exact inverse of [`apply_nonlinear`] for the same step.
pub(crate) fn invert_nonlinear(field: &mut [Complex64], gamma_per_w_m: f64, dz_m: f64, alpha_per_m: f64) {
    let k = gamma_per_w_m * effective_length(alpha_per_m, dz_m);
    let gain = (0.5 * alpha_per_m * dz_m).exp();
    for a in field.iter_mut() {
        *a *= gain;
        *a *= Complex64::from_polar(1.0, -k * a.norm_sqr());
    }
}

/// All-pass dispersion over `dz_m` metres with `beta2` in s²/m.
pub fn dispersion_step(signal: &ComplexSignal, beta2: f64, dz_m: f64) -> Result<ComplexSignal> {
    let mut engine = SplitStepEngine::new(signal.len(), signal.sample_rate_hz(), beta2)?;
    let mut field = signal.samples().to_vec();
    engine.disperse(&mut field, dz_m);
    Ok(ComplexSignal::from_parts(field, signal.sample_rate_hz()))
}

/// SPM phase rotation `γ·|A|²·dz_eff` with attenuation; `gamma` in 1/(W·m), `alpha` power loss in 1/m.
pub fn nonlinear_step(signal: &ComplexSignal, gamma_per_w_m: f64, dz_m: f64, alpha_per_m: f64) -> ComplexSignal {
    let mut field = signal.samples().to_vec();
    apply_nonlinear(&mut field, gamma_per_w_m, dz_m, alpha_per_m);
    ComplexSignal::from_parts(field, signal.sample_rate_hz())
}

/// Split-step propagation over `params.length_km`, then AWGN at the output if enabled.
pub fn propagate_ssfm(signal: &ComplexSignal, params: &FiberParams, noise: &NoiseConfig) -> Result<ComplexSignal> {
    params.validate()?;
    noise.validate()?;
    let mut engine = SplitStepEngine::new(signal.len(), signal.sample_rate_hz(), params.beta2())?;
    let mut field = signal.samples().to_vec();
    let (gamma, alpha) = (params.gamma_per_w_m(), params.alpha_per_m());
    engine.run(&mut field, &params.step_schedule_m(), |f, h| {
        apply_nonlinear(f, gamma, h, alpha)
    });
    let out = ComplexSignal::new(field, signal.sample_rate_hz())?;
    if noise.enabled {
        add_awgn(&out, noise.snr_db, noise.seed)
    } else {
        Ok(out)
    }
}

/// Circular complex Gaussian noise with variance `mean_power / 10^(snr_db/10)`.
pub fn add_awgn(signal: &ComplexSignal, snr_db: f64, seed: u64) -> Result<ComplexSignal> {
    if snr_db == f64::INFINITY {
        return Ok(signal.clone());
    }
    if snr_db.is_nan() {
        return Err(Error::Config("SNR is NaN".into()));
    }
    let p = signal.mean_power();
    if p <= 0.0 {
        return Err(Error::DegenerateInput("cannot set SNR of an all-zero signal".into()));
    }
    let sigma = (p / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = signal
        .samples()
        .iter()
        .map(|s| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            s + Complex64::new(re, im) * sigma
        })
        .collect();
    Ok(ComplexSignal::from_parts(samples, signal.sample_rate_hz()))
}
