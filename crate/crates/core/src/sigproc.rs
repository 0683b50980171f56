//! Transmitter-side signal processing and decision utilities.
//!
//! Bits are mapped to Gray-coded 16QAM, zero-stuffed to `sps` samples per
//! symbol, shaped with a root-raised-cosine filter and scaled to the launch
//! power. The same filter (matched) and [`downsample`] recover the symbols at
//! the receiver.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Uniformly sampled complex baseband waveform. Amplitudes are in sqrt-watts.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSignal {
    samples: Vec<Complex64>,
    sample_rate_hz: f64,
}

impl ComplexSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InputShape("signal has no samples".into()));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::Config(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if let Some(k) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::Numeric(format!("sample {k} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// Internal constructor for values derived from an already valid signal.
    pub(crate) fn from_parts(samples: Vec<Complex64>, sample_rate_hz: f64) -> Self {
        debug_assert!(!samples.is_empty() && sample_rate_hz > 0.0);
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample spacing in seconds.
    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    pub fn mean_power(&self) -> f64 {
        self.energy() / self.samples.len() as f64
    }

    /// New signal with the same sample rate.
    pub fn with_samples(&self, samples: Vec<Complex64>) -> Result<Self> {
        Self::new(samples, self.sample_rate_hz)
    }

    /// Zero-pads to the next power-of-two length (no-op if already one).
    pub fn padded_to_pow2(&self) -> Self {
        let n = self.samples.len().next_power_of_two();
        let mut samples = self.samples.clone();
        samples.resize(n, Complex64::new(0.0, 0.0));
        Self::from_parts(samples, self.sample_rate_hz)
    }

    /// Keeps the first `len` samples.
    pub fn truncated(mut self, len: usize) -> Self {
        self.samples.truncate(len.max(1));
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TxConfig {
    pub symbol_rate_baud: f64,
    pub sps: usize,
    pub rolloff: f64,
    pub rrc_span_symbols: usize,
    pub launch_power_dbm: f64,
}

impl Default for TxConfig {
    fn default() -> Self {
        Self {
            symbol_rate_baud: 3.0e10,
            sps: 4,
            rolloff: 0.1,
            rrc_span_symbols: 32,
            launch_power_dbm: 10.0,
        }
    }
}

impl TxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sps < 2 {
            return Err(Error::Config(format!("sps must be >= 2, got {}", self.sps)));
        }
        if !(self.symbol_rate_baud.is_finite() && self.symbol_rate_baud > 0.0) {
            return Err(Error::Config("symbol rate must be positive".into()));
        }
        if !(self.rolloff > 0.0 && self.rolloff <= 1.0) {
            return Err(Error::Config(format!("rolloff {} outside (0, 1]", self.rolloff)));
        }
        if self.rrc_span_symbols == 0 || !self.rrc_span_symbols.is_multiple_of(2) {
            return Err(Error::Config("RRC span must be a positive even symbol count".into()));
        }
        if !self.launch_power_dbm.is_finite() {
            return Err(Error::Config("launch power must be finite".into()));
        }
        Ok(())
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.symbol_rate_baud * self.sps as f64
    }

    pub fn rrc(&self) -> Result<Vec<f64>> {
        rrc_taps(self.rolloff, self.rrc_span_symbols, self.sps)
    }
}

/// `n` uniform bits from ChaCha8 seeded with `seed`, consumed 64 at a time LSB first.
pub fn random_bits(n: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bits = Vec::with_capacity(n);
    while bits.len() < n {
        let word = rng.next_u64();
        let take = (n - bits.len()).min(64);
        bits.extend((0..take).map(|k| ((word >> k) & 1) as u8));
    }
    bits
}

const QAM16_SCALE: f64 = 0.316_227_766_016_837_94; // 1/sqrt(10)

/// Gray order per axis: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3.
fn gray_level(b0: u8, b1: u8) -> f64 {
    match (b0, b1) {
        (0, 0) => -3.0,
        (0, 1) => -1.0,
        (1, 1) => 1.0,
        _ => 3.0,
    }
}

fn level_bits(x: f64) -> [u8; 2] {
    // Ties resolve toward the lower level.
    if x <= -2.0 {
        [0, 0]
    } else if x <= 0.0 {
        [0, 1]
    } else if x <= 2.0 {
        [1, 1]
    } else {
        [1, 0]
    }
}

/// Maps groups of four bits to unit-energy Gray 16QAM: bits 0-1 pick I, bits 2-3 pick Q.
pub fn map_bits_to_qam16(bits: &[u8]) -> Result<Vec<Complex64>> {
    if !bits.len().is_multiple_of(4) {
        return Err(Error::InputShape(format!(
            "16QAM needs a multiple of 4 bits, got {}",
            bits.len()
        )));
    }
    if bits.iter().any(|&b| b > 1) {
        return Err(Error::InputShape("bits must be 0 or 1".into()));
    }
    Ok(bits
        .chunks_exact(4)
        .map(|g| {
            Complex64::new(gray_level(g[0], g[1]), gray_level(g[2], g[3])) * QAM16_SCALE
        })
        .collect())
}

/// Nearest-point hard decision for unit-energy 16QAM.
pub fn demap_qam16(symbols: &[Complex64]) -> Vec<u8> {
    let mut bits = Vec::with_capacity(symbols.len() * 4);
    for s in symbols {
        bits.extend_from_slice(&level_bits(s.re / QAM16_SCALE));
        bits.extend_from_slice(&level_bits(s.im / QAM16_SCALE));
    }
    bits
}

/// The 16 constellation points in index order `i = 4·(I bits) + (Q bits)`.
pub fn qam16_constellation() -> Vec<Complex64> {
    (0u8..16)
        .map(|i| {
            let bits = [(i >> 3) & 1, (i >> 2) & 1, (i >> 1) & 1, i & 1];
            map_bits_to_qam16(&bits).expect("four bits")[0]
        })
        .collect()
}

/// Index of the nearest constellation point, consistent with [`qam16_constellation`].
pub fn qam16_index(s: Complex64) -> usize {
    let b = demap_qam16(&[s]);
    ((b[0] << 3) | (b[1] << 2) | (b[2] << 1) | b[3]) as usize
}

/// Smallest distance between two unit-energy 16QAM points.
pub const QAM16_MIN_SPACING: f64 = 2.0 * QAM16_SCALE;

pub fn upsample(symbols: &[Complex64], sps: usize, symbol_rate_baud: f64) -> Result<ComplexSignal> {
    if sps < 2 {
        return Err(Error::Config(format!("sps must be >= 2, got {sps}")));
    }
    let mut samples = vec![Complex64::new(0.0, 0.0); symbols.len() * sps];
    for (k, &s) in symbols.iter().enumerate() {
        samples[k * sps] = s;
    }
    ComplexSignal::new(samples, symbol_rate_baud * sps as f64)
}

/// Unit-energy root-raised-cosine taps, `span_symbols·sps + 1` long.
pub fn rrc_taps(rolloff: f64, span_symbols: usize, sps: usize) -> Result<Vec<f64>> {
    if !(rolloff > 0.0 && rolloff <= 1.0) {
        return Err(Error::Config(format!("rolloff {rolloff} outside (0, 1]")));
    }
    if !span_symbols.is_multiple_of(2) {
        return Err(Error::Config(format!("RRC span {span_symbols} must be even")));
    }
    if sps == 0 {
        return Err(Error::Config("sps must be positive".into()));
    }
    let n = span_symbols * sps + 1;
    let half = (n / 2) as f64;
    let b = rolloff;
    let mut taps: Vec<f64> = (0..n)
        .map(|k| {
            let t = (k as f64 - half) / sps as f64;
            if t.abs() < 1e-12 {
                1.0 - b + 4.0 * b / PI
            } else if (1.0 - (4.0 * b * t).powi(2)).abs() < 1e-10 {
                let a = PI / (4.0 * b);
                b * FRAC_1_SQRT_2 * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos())
            } else {
                ((PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos())
                    / (PI * t * (1.0 - (4.0 * b * t).powi(2)))
            }
        })
        .collect();
    let norm = taps.iter().map(|h| h * h).sum::<f64>().sqrt();
    taps.iter_mut().for_each(|h| *h /= norm);
    Ok(taps)
}

/// Direct-form convolution with "same" alignment: the `(N-1)/2` group delay is removed.
pub fn fir_filter(signal: &ComplexSignal, taps: &[f64]) -> Result<ComplexSignal> {
    if taps.is_empty() {
        return Err(Error::InputShape("filter has no taps".into()));
    }
    let x = signal.samples();
    let len = x.len() as isize;
    let delay = ((taps.len() - 1) / 2) as isize;
    let out = (0..len)
        .map(|n| {
            let mut acc = Complex64::new(0.0, 0.0);
            // x index m = n + delay - k must lie in [0, len)
            let k_lo = (n + delay - len + 1).max(0) as usize;
            let k_hi = ((n + delay) as usize).min(taps.len() - 1);
            for k in k_lo..=k_hi {
                acc += x[(n + delay) as usize - k] * taps[k];
            }
            acc
        })
        .collect();
    Ok(ComplexSignal::from_parts(out, signal.sample_rate_hz()))
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) / 1000.0
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w * 1000.0).log10()
}

/// Scales by one positive real factor so the mean power equals `power_dbm`.
pub fn set_average_power(signal: &ComplexSignal, power_dbm: f64) -> Result<ComplexSignal> {
    let p = signal.mean_power();
    if p <= 0.0 {
        return Err(Error::DegenerateInput("cannot normalize an all-zero signal".into()));
    }
    let g = (dbm_to_watts(power_dbm) / p).sqrt();
    Ok(ComplexSignal::from_parts(
        signal.samples().iter().map(|s| s * g).collect(),
        signal.sample_rate_hz(),
    ))
}

/// Samples at `phase_offset + k·sps`.
pub fn downsample(signal: &ComplexSignal, sps: usize, phase_offset: usize) -> Result<Vec<Complex64>> {
    if sps == 0 || phase_offset >= sps {
        return Err(Error::Config(format!(
            "phase offset {phase_offset} must lie in [0, {sps})"
        )));
    }
    Ok(signal.samples().iter().skip(phase_offset).step_by(sps).copied().collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BitErrors {
    pub errors: u64,
    pub total: u64,
    pub ber: f64,
}

impl BitErrors {
    pub fn from_counts(errors: u64, total: u64) -> Self {
        let ber = if total == 0 { 0.0 } else { errors as f64 / total as f64 };
        Self { errors, total, ber }
    }

    pub fn merge(self, other: Self) -> Self {
        Self::from_counts(self.errors + other.errors, self.total + other.total)
    }
}

pub fn count_bit_errors(tx_bits: &[u8], rx_bits: &[u8]) -> Result<BitErrors> {
    if tx_bits.len() != rx_bits.len() {
        return Err(Error::InputShape(format!(
            "bit streams differ in length: {} vs {}",
            tx_bits.len(),
            rx_bits.len()
        )));
    }
    let errors = tx_bits.iter().zip(rx_bits).filter(|(a, b)| a != b).count() as u64;
    Ok(BitErrors::from_counts(errors, tx_bits.len() as u64))
}

/// Symbols to launch waveform: upsample, RRC shaping, launch-power normalization.
pub fn transmit(symbols: &[Complex64], cfg: &TxConfig) -> Result<ComplexSignal> {
    cfg.validate()?;
    let up = upsample(symbols, cfg.sps, cfg.symbol_rate_baud)?;
    let shaped = fir_filter(&up, &cfg.rrc()?)?;
    set_average_power(&shaped, cfg.launch_power_dbm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn mapping_table_corners() {
        let s = map_bits_to_qam16(&[0, 0, 0, 0]).unwrap();
        assert_eq!(s[0], c(-3.0, -3.0) / 10f64.sqrt());
        let s = map_bits_to_qam16(&[1, 1, 1, 1]).unwrap();
        assert_eq!(s[0], c(1.0, 1.0) / 10f64.sqrt());
        let s = map_bits_to_qam16(&[1, 0, 0, 1]).unwrap();
        assert_eq!(s[0], c(3.0, -1.0) / 10f64.sqrt());
    }

    #[test]
    fn constellation_has_unit_mean_energy() {
        let pts = qam16_constellation();
        let e = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / 16.0;
        assert!((e - 1.0).abs() < 1e-15, "{e}");
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(qam16_index(*p), i);
        }
    }

    #[test]
    fn mapping_rejects_ragged_input() {
        assert!(matches!(map_bits_to_qam16(&[0, 1, 1]), Err(Error::InputShape(_))));
    }

    #[test]
    fn demap_round_trips_every_four_symbol_pattern() {
        for pattern in 0u32..65536 {
            let bits: Vec<u8> = (0..16).map(|k| ((pattern >> k) & 1) as u8).collect();
            let syms = map_bits_to_qam16(&bits).unwrap();
            assert_eq!(demap_qam16(&syms), bits);
        }
    }

    #[test]
    fn demap_nearest_point_and_tie_rule() {
        let s = c(0.9, 0.9) / 10f64.sqrt();
        assert_eq!(demap_qam16(&[s]), vec![1, 1, 1, 1]);
        // I = 0 sits between -1 and +1: lower (-1 -> bits 01) wins.
        let bits = demap_qam16(&[c(0.0, 3.0) / 10f64.sqrt()]);
        assert_eq!(&bits[..2], &[0, 1]);
        let bits = demap_qam16(&[c(-2.0, 2.0) / 10f64.sqrt()]);
        assert_eq!(bits, vec![0, 0, 1, 1]);
    }

    #[test]
    fn upsample_zero_stuffs() {
        let (a, b) = (c(1.0, 2.0), c(-3.0, 0.5));
        let up = upsample(&[a, b], 4, 3.0e10).unwrap();
        let z = c(0.0, 0.0);
        assert_eq!(up.samples(), &[a, z, z, z, b, z, z, z]);
        assert_eq!(up.sample_rate_hz(), 1.2e11);
        assert!((up.energy() - (a.norm_sqr() + b.norm_sqr())).abs() < 1e-15);
        assert!(matches!(upsample(&[a], 1, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn rrc_shape_contract() {
        let taps = rrc_taps(0.1, 32, 4).unwrap();
        assert_eq!(taps.len(), 129);
        for k in 0..taps.len() {
            assert_eq!(taps[k], taps[taps.len() - 1 - k]);
        }
        let e: f64 = taps.iter().map(|h| h * h).sum();
        assert!((e - 1.0).abs() < 1e-12);
        assert!(taps.iter().all(|h| h.is_finite()));
        assert!(rrc_taps(0.0, 32, 4).is_err());
        assert!(rrc_taps(1.5, 32, 4).is_err());
        assert!(rrc_taps(0.1, 31, 4).is_err());
    }

    fn rrc_generic(b: f64, t: f64) -> f64 {
        ((PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos())
            / (PI * t * (1.0 - (4.0 * b * t).powi(2)))
    }

    #[test]
    fn rrc_singular_points_match_neighbourhood() {
        // At sps 4 and rolloff 0.1 the singular point t = 2.5 T lands on center ± 10.
        let b = 0.1;
        let taps = rrc_taps(b, 32, 4).unwrap();
        let center = taps.len() / 2;
        let eps = 1e-5;
        let peak = 1.0 - b + 4.0 * b / PI;
        for k in [center - 10, center + 10] {
            let t = (k as f64 - center as f64) / 4.0;
            let approx = 0.5 * (rrc_generic(b, t - eps) + rrc_generic(b, t + eps));
            assert!((taps[k] / taps[center] - approx / peak).abs() < 1e-8);
        }
        let at_zero = 0.5 * (rrc_generic(b, -eps) + rrc_generic(b, eps));
        assert!((at_zero - peak).abs() < 1e-8);
    }

    fn cascade_at_symbol_lags(span: usize, sps: usize) -> Vec<f64> {
        let taps = rrc_taps(0.1, span, sps).unwrap();
        let n = taps.len();
        let mut full = vec![0.0; 2 * n - 1];
        for i in 0..n {
            for j in 0..n {
                full[i + j] += taps[i] * taps[j];
            }
        }
        let center = n - 1;
        (sps..=center).step_by(sps).map(|m| {
            assert_eq!(full[center + m], full[center - m]);
            full[center + m] / full[center]
        }).collect()
    }

    /// Zero-ISI oracle: full convolution of the taps with themselves, read at symbol spacing.
    #[test]
    fn rrc_cascade_is_nyquist() {
        // A 64-symbol span keeps every off-center lag under 1e-3.
        let lags = cascade_at_symbol_lags(64, 4);
        assert!(lags.iter().all(|v| v.abs() < 1e-3), "{lags:?}");
    }

    #[test]
    fn default_span_cascade_truncation_floor() {
        // Independent reference values for the 129-tap default: the truncation
        // ripple peaks at the span edge (16 symbols) at 3.42e-3 of center.
        let lags = cascade_at_symbol_lags(32, 4);
        assert_eq!(lags.len(), 32);
        let reference = [(1, 6.23e-5), (8, 1.47e-4), (14, 8.69e-4), (15, -1.28e-3), (16, 3.42e-3), (17, -1.99e-3), (32, 5.32e-7)];
        for (lag, want) in reference {
            let got = lags[lag - 1];
            assert!((got - want).abs() < 0.01 * want.abs(), "lag {lag}: {got}");
        }
        assert!(lags[..14].iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn fir_identity_cases() {
        let x = ComplexSignal::new((0..9).map(|k| c(k as f64, -(k as f64))).collect(), 1.0).unwrap();
        assert_eq!(fir_filter(&x, &[1.0]).unwrap(), x);
        assert_eq!(fir_filter(&x, &[0.0, 1.0, 0.0]).unwrap(), x);
        assert!(fir_filter(&x, &[]).is_err());

        let mut imp = vec![c(0.0, 0.0); 11];
        imp[5] = c(1.0, 0.0);
        let imp = ComplexSignal::new(imp, 1.0).unwrap();
        let taps = [0.1, 0.2, 0.3, 0.4, 0.5];
        let y = fir_filter(&imp, &taps).unwrap();
        for (k, &t) in taps.iter().enumerate() {
            assert_eq!(y.samples()[3 + k], c(t, 0.0));
        }
    }

    #[test]
    fn power_normalization() {
        let x = ComplexSignal::new(vec![c(1.0, 2.0), c(-0.5, 0.1), c(3.0, 0.0)], 1.0).unwrap();
        let y = set_average_power(&x, 10.0).unwrap();
        assert!((y.mean_power() - 0.010).abs() < 1e-15);
        let y0 = set_average_power(&x, 0.0).unwrap();
        assert!((y0.mean_power() - 0.001).abs() < 1e-16);
        let yy = set_average_power(&y, 10.0).unwrap();
        for (a, b) in y.samples().iter().zip(yy.samples()) {
            assert!((a - b).norm() < 1e-15);
        }
        let zero = ComplexSignal::new(vec![c(0.0, 0.0); 4], 1.0).unwrap();
        assert!(matches!(set_average_power(&zero, 0.0), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn downsample_cases() {
        let (a, b) = (c(1.0, 1.0), c(2.0, -1.0));
        let up = upsample(&[a, b], 4, 1.0).unwrap();
        assert_eq!(downsample(&up, 4, 0).unwrap(), vec![a, b]);
        assert_eq!(downsample(&up, 4, 1).unwrap(), vec![c(0.0, 0.0); 2]);
        assert!(downsample(&up, 4, 4).is_err());
        let x = ComplexSignal::new(vec![c(1.0, 0.0); 10], 1.0).unwrap();
        for off in 0..4 {
            assert_eq!(downsample(&x, 4, off).unwrap().len(), (10 - off).div_ceil(4));
        }
    }

    #[test]
    fn bit_error_counting() {
        let tx = random_bits(400_000, 3);
        let r = count_bit_errors(&tx, &tx).unwrap();
        assert_eq!((r.errors, r.total, r.ber), (0, 400_000, 0.0));
        let mut rx = tx.clone();
        rx[12345] ^= 1;
        assert_eq!(count_bit_errors(&tx, &rx).unwrap().ber, 2.5e-6);
        let inv: Vec<u8> = tx.iter().map(|b| b ^ 1).collect();
        assert_eq!(count_bit_errors(&tx, &inv).unwrap().ber, 1.0);
        assert!(count_bit_errors(&tx, &rx[1..]).is_err());
    }

    #[test]
    fn random_bits_are_reproducible_and_balanced() {
        let a = random_bits(100_000, 11);
        assert_eq!(a, random_bits(100_000, 11));
        assert_ne!(a, random_bits(100_000, 12));
        let ones = a.iter().filter(|&&b| b == 1).count() as f64;
        assert!((ones / 1e5 - 0.5).abs() < 0.01);
    }

    #[test]
    fn signal_rejects_invalid_construction() {
        assert!(ComplexSignal::new(vec![], 1.0).is_err());
        assert!(ComplexSignal::new(vec![c(1.0, 0.0)], 0.0).is_err());
        assert!(ComplexSignal::new(vec![c(f64::NAN, 0.0)], 1.0).is_err());
    }
}
