//! In-place iterative radix-2 FFT.
//!
//! Forward transform is unscaled, inverse carries the `1/N`, so
//! `ifft(fft(x)) = x` and `Σ|x|² = Σ|X|² / N`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Precomputed twiddles and bit-reversal table for one transform length.
#[derive(Clone, Debug)]
pub struct FftPlan {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::InputShape(format!(
                "FFT length must be a power of two, got {n}"
            )));
        }
        let twiddles = (0..n / 2)
            .map(|k| {
                let (s, c) = (-2.0 * PI * k as f64 / n as f64).sin_cos();
                Complex64::new(c, s)
            })
            .collect();
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        Ok(Self { n, twiddles, bitrev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, true);
        let scale = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|x| *x *= scale);
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        assert_eq!(buf.len(), self.n, "buffer length does not match plan");
        for i in 0..self.n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= self.n {
            let half = len / 2;
            let stride = self.n / len;
            for block in buf.chunks_exact_mut(len) {
                let (lo, hi) = block.split_at_mut(half);
                for (j, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                    let w = self.twiddles[j * stride];
                    let w = if inverse { w.conj() } else { w };
                    let t = *b * w;
                    *b = *a - t;
                    *a += t;
                }
            }
            len <<= 1;
        }
    }
}

pub fn fft(samples: &[Complex64]) -> Result<Vec<Complex64>> {
    let plan = FftPlan::new(samples.len())?;
    let mut buf = samples.to_vec();
    plan.forward(&mut buf);
    Ok(buf)
}

pub fn ifft(spectrum: &[Complex64]) -> Result<Vec<Complex64>> {
    let plan = FftPlan::new(spectrum.len())?;
    let mut buf = spectrum.to_vec();
    plan.inverse(&mut buf);
    Ok(buf)
}
