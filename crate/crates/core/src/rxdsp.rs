//! Receiver DSP: CD compensation, digital backpropagation, matched filtering
//! and hard decisions.
//!
//! Compensation runs at the full oversampled rate, before the matched filter.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fiberchan::{self, FiberParams, SplitStepEngine};
use crate::sigproc::{self, BitErrors, ComplexSignal, TxConfig};

/// Minimum number of symbols for a meaningful least-squares alignment.
pub const MIN_ALIGN_SYMBOLS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DspMode {
    None,
    CdOnly,
    Dbp { steps_per_km: f64 },
}

impl DspMode {
    /// DBP with the forward simulation's default step density.
    pub fn dbp_default() -> Self {
        DspMode::Dbp { steps_per_km: 100.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DspMode::Dbp { steps_per_km } if !(steps_per_km.is_finite() && steps_per_km > 0.0) => {
                Err(Error::Config(format!("DBP steps per km must be > 0, got {steps_per_km}")))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            DspMode::None => "none",
            DspMode::CdOnly => "cd_only",
            DspMode::Dbp { .. } => "dbp",
        }
    }
}

impl fmt::Display for DspMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DspMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DspMode::None),
            "cd" | "cd_only" => Ok(DspMode::CdOnly),
            "dbp" => Ok(DspMode::dbp_default()),
            other => Err(Error::Config(format!("unknown DSP mode '{other}'"))),
        }
    }
}

/// Undoes `length_m` of dispersion in one frequency-domain pass.
pub fn cd_compensate(signal: &ComplexSignal, beta2: f64, length_m: f64) -> Result<ComplexSignal> {
    fiberchan::dispersion_step(signal, beta2, -length_m)
}

/// Reverse split-step with negated β2 and γ and inverse attenuation.
///
/// With `steps_per_km` equal to the forward step density the sub-steps are
/// replayed in exact reverse order, so a noise-free run inverts the channel
/// to rounding error.
pub fn dbp(signal: &ComplexSignal, params: &FiberParams, steps_per_km: f64) -> Result<ComplexSignal> {
    params.validate()?;
    DspMode::Dbp { steps_per_km }.validate()?;
    let step_km = 1.0 / steps_per_km;
    let mut steps = fiberchan::step_schedule(params.length_km, step_km);
    steps.reverse();
    let mut engine = SplitStepEngine::new(signal.len(), signal.sample_rate_hz(), -params.beta2())?;
    let (gamma, alpha) = (params.gamma_per_w_m(), params.alpha_per_m());
    let mut field = signal.samples().to_vec();
    engine.run(&mut field, &steps, |f, h| fiberchan::invert_nonlinear(f, gamma, h, alpha));
    ComplexSignal::new(field, signal.sample_rate_hz())
}

/// Applies the mode's compensation, padding to a power of two when needed.
pub fn compensate(signal: &ComplexSignal, mode: DspMode, params: &FiberParams) -> Result<ComplexSignal> {
    mode.validate()?;
    if matches!(mode, DspMode::None) {
        return Ok(signal.clone());
    }
    let len = signal.len();
    let padded = signal.padded_to_pow2();
    let out = match mode {
        DspMode::CdOnly => cd_compensate(&padded, params.beta2(), params.length_m())?,
        DspMode::Dbp { steps_per_km } => dbp(&padded, params, steps_per_km)?,
        DspMode::None => unreachable!(),
    };
    Ok(out.truncated(len))
}

/// Compensation, matched RRC and symbol-instant sampling.
pub fn receive_symbols(
    signal: &ComplexSignal,
    mode: DspMode,
    tx: &TxConfig,
    params: &FiberParams,
) -> Result<Vec<Complex64>> {
    tx.validate()?;
    let compensated = compensate(signal, mode, params)?;
    let matched = sigproc::fir_filter(&compensated, &tx.rrc()?)?;
    sigproc::downsample(&matched, tx.sps, 0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    /// Received symbols after the least-squares correction.
    pub scaled: Vec<Complex64>,
    pub bits: Vec<u8>,
    pub factor: Complex64,
}

/// Least-squares complex gain `a = Σ conj(rx)·ref / Σ|rx|²`.
pub fn ls_factor(rx: &[Complex64], reference: &[Complex64]) -> Result<Complex64> {
    if rx.len() != reference.len() {
        return Err(Error::InputShape(format!(
            "rx has {} symbols, reference has {}",
            rx.len(),
            reference.len()
        )));
    }
    let num: Complex64 = rx.iter().zip(reference).map(|(r, s)| r.conj() * s).sum();
    let den: f64 = rx.iter().map(|r| r.norm_sqr()).sum();
    if den == 0.0 {
        return Err(Error::DegenerateInput("received symbols are all zero".into()));
    }
    Ok(num / den)
}

/// Removes a constant complex gain against the reference, then hard-decides.
pub fn align_and_decide(rx: &[Complex64], reference: &[Complex64]) -> Result<Decision> {
    if rx.len() != reference.len() {
        return Err(Error::InputShape(format!(
            "rx has {} symbols, reference has {}",
            rx.len(),
            reference.len()
        )));
    }
    if rx.len() < MIN_ALIGN_SYMBOLS {
        return Err(Error::InputShape(format!(
            "need at least {MIN_ALIGN_SYMBOLS} symbols to align, got {}",
            rx.len()
        )));
    }
    let factor = ls_factor(rx, reference)?;
    let scaled: Vec<Complex64> = rx.iter().map(|r| r * factor).collect();
    let bits = sigproc::demap_qam16(&scaled);
    Ok(Decision { scaled, bits, factor })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RxOutcome {
    /// Decided bits of the evaluated (interior) symbols.
    pub bits: Vec<u8>,
    pub errors: BitErrors,
    /// Aligned interior symbols.
    pub constellation: Vec<Complex64>,
    pub factor: Complex64,
}

/// Full receiver against known transmitted bits. Decisions and counts cover
/// symbols `[edge_symbols, n - edge_symbols)` only.
pub fn run_rx_chain(
    signal: &ComplexSignal,
    mode: DspMode,
    tx: &TxConfig,
    params: &FiberParams,
    ref_bits: &[u8],
    edge_symbols: usize,
) -> Result<RxOutcome> {
    let rx = receive_symbols(signal, mode, tx, params)?;
    let reference = sigproc::map_bits_to_qam16(ref_bits)?;
    if reference.len() != rx.len() {
        return Err(Error::InputShape(format!(
            "signal carries {} symbols but {} reference symbols were given",
            rx.len(),
            reference.len()
        )));
    }
    if rx.len() <= 2 * edge_symbols {
        return Err(Error::InputShape(format!(
            "{} symbols leave no interior after discarding {edge_symbols} per edge",
            rx.len()
        )));
    }
    let range = edge_symbols..rx.len() - edge_symbols;
    let decision = align_and_decide(&rx[range.clone()], &reference[range.clone()])?;
    let errors = sigproc::count_bit_errors(&ref_bits[4 * range.start..4 * range.end], &decision.bits)?;
    Ok(RxOutcome {
        bits: decision.bits,
        errors,
        constellation: decision.scaled,
        factor: decision.factor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiberchan::{propagate_ssfm, NoiseConfig};
    use crate::sigproc::{map_bits_to_qam16, random_bits, transmit};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn rel_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    fn launch(n_symbols: usize, seed: u64) -> (Vec<u8>, ComplexSignal) {
        let bits = random_bits(4 * n_symbols, seed);
        let sig = transmit(&map_bits_to_qam16(&bits).unwrap(), &TxConfig::default()).unwrap();
        (bits, sig)
    }

    #[test]
    fn cd_compensation_inverts_linear_channel() {
        let (_, x) = launch(256, 1);
        let p = FiberParams { gamma_per_w_km: 0.0, alpha_db_km: 0.0, ..FiberParams::default().with_length(3.0) };
        let y = propagate_ssfm(&x, &p, &NoiseConfig::off()).unwrap();
        let z = cd_compensate(&y, p.beta2(), p.length_m()).unwrap();
        assert!(rel_l2(z.samples(), x.samples()) < 1e-10);
        let id = cd_compensate(&x, p.beta2(), 0.0).unwrap();
        assert!(rel_l2(id.samples(), x.samples()) < 1e-14);
    }

    #[test]
    fn cd_compensation_composes() {
        let (_, x) = launch(256, 2);
        let b2 = FiberParams::default().beta2();
        let two = cd_compensate(&cd_compensate(&x, b2, 7e3).unwrap(), b2, 11e3).unwrap();
        let one = cd_compensate(&x, b2, 18e3).unwrap();
        assert!(rel_l2(two.samples(), one.samples()) < 1e-12);
    }

    #[test]
    fn dbp_without_kerr_matches_cd_compensation() {
        let (_, x) = launch(256, 3);
        let p = FiberParams { gamma_per_w_km: 0.0, alpha_db_km: 0.0, ..FiberParams::default().with_length(5.0) };
        let a = dbp(&x, &p, 100.0).unwrap();
        let b = cd_compensate(&x, p.beta2(), p.length_m()).unwrap();
        assert!(rel_l2(a.samples(), b.samples()) < 1e-10);
        assert!(matches!(dbp(&x, &p, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn matched_filter_and_cd_commute() {
        let (_, x) = launch(256, 4);
        let mut padded = vec![Complex64::new(0.0, 0.0); 4096];
        padded[1536..1536 + x.len()].copy_from_slice(x.samples());
        let x = x.with_samples(padded).unwrap();
        let p = FiberParams::default().with_length(20.0);
        let taps = TxConfig::default().rrc().unwrap();
        let a = sigproc::fir_filter(&cd_compensate(&x, p.beta2(), p.length_m()).unwrap(), &taps).unwrap();
        let b = cd_compensate(&sigproc::fir_filter(&x, &taps).unwrap(), p.beta2(), p.length_m()).unwrap();
        // The circular CD leaves tiny tails at the buffer edges, where linear
        // filtering sees zeros; compare outside half a filter span from the ends.
        let e = rel_l2(&a.samples()[128..3968], &b.samples()[128..3968]);
        assert!(e < 1e-10, "{e}");
    }

    #[test]
    fn align_corrects_complex_gain() {
        let bits = random_bits(4 * 200, 5);
        let reference = map_bits_to_qam16(&bits).unwrap();
        let c = Complex64::from_polar(0.37, 2.1);
        let rx: Vec<Complex64> = reference.iter().map(|s| s * c).collect();
        let d = align_and_decide(&rx, &reference).unwrap();
        assert_eq!(d.bits, bits);
        assert!((d.factor * c - 1.0).norm() < 1e-12);
        let same = align_and_decide(&reference, &reference).unwrap();
        assert!((same.factor - 1.0).norm() < 1e-15);
        assert!(align_and_decide(&rx[..10], &reference[..10]).is_err());
        assert!(align_and_decide(&rx, &reference[1..]).is_err());
    }

    #[test]
    fn rotation_does_not_change_noisy_ber() {
        let bits = random_bits(4 * 20_000, 6);
        let reference = map_bits_to_qam16(&bits).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noisy: Vec<Complex64> = reference
            .iter()
            .map(|s| {
                let (re, im): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                s + Complex64::new(re, im) * 0.12
            })
            .collect();
        let rot = Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4);
        let rotated: Vec<Complex64> = noisy.iter().map(|s| s * rot).collect();
        let a = align_and_decide(&noisy, &reference).unwrap();
        let b = align_and_decide(&rotated, &reference).unwrap();
        let ea = sigproc::count_bit_errors(&bits, &a.bits).unwrap();
        let eb = sigproc::count_bit_errors(&bits, &b.bits).unwrap();
        assert!(ea.errors > 0);
        assert_eq!(ea.errors, eb.errors);
    }

    #[test]
    fn back_to_back_chain_is_error_free() {
        let (bits, x) = launch(1024, 7);
        let out = run_rx_chain(&x, DspMode::None, &TxConfig::default(), &FiberParams::default(), &bits, 20).unwrap();
        assert_eq!(out.errors.errors, 0);
        assert_eq!(out.errors.total, 4 * (1024 - 40));
    }

    #[test]
    fn tx_rx_chain_recovers_symbols() {
        // With a 128-symbol span the truncation floor sits well below 1e-3.
        let n = 4096;
        let tx = TxConfig { rrc_span_symbols: 128, ..TxConfig::default() };
        let bits = random_bits(4 * n, 8);
        let reference = map_bits_to_qam16(&bits).unwrap();
        let x = transmit(&reference, &tx).unwrap();
        let rx = receive_symbols(&x, DspMode::None, &tx, &FiberParams::default()).unwrap();
        let (lo, hi) = (128, n - 128);
        let a = ls_factor(&rx[lo..hi], &reference[lo..hi]).unwrap();
        let aligned: Vec<Complex64> = rx[lo..hi].iter().map(|r| r * a).collect();
        assert!(rel_l2(&aligned, &reference[lo..hi]) < 1e-3);
    }

    #[test]
    fn default_span_chain_error_is_truncation_limited() {
        // The 129-tap default leaves an ISI floor near 6.7e-3 relative.
        let n = 4096;
        let (bits, x) = launch(n, 8);
        let rx = receive_symbols(&x, DspMode::None, &TxConfig::default(), &FiberParams::default()).unwrap();
        let reference = map_bits_to_qam16(&bits).unwrap();
        let a = ls_factor(&rx[40..n - 40], &reference[40..n - 40]).unwrap();
        let aligned: Vec<Complex64> = rx[40..n - 40].iter().map(|r| r * a).collect();
        let e = rel_l2(&aligned, &reference[40..n - 40]);
        assert!(e > 5e-3 && e < 8e-3, "{e}");
    }

    #[test]
    fn chain_rejects_mismatched_reference() {
        let (bits, x) = launch(256, 9);
        let r = run_rx_chain(&x, DspMode::None, &TxConfig::default(), &FiberParams::default(), &bits[..400], 20);
        assert!(matches!(r, Err(Error::InputShape(_))));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("cd".parse::<DspMode>().unwrap(), DspMode::CdOnly);
        assert_eq!("dbp".parse::<DspMode>().unwrap(), DspMode::Dbp { steps_per_km: 100.0 });
        assert!("ml".parse::<DspMode>().is_err());
    }
}
