//! Synthetic wide-sense-stationary fields with power-law spectra,
//! `E[|X0(f)|^2] = A_s / f^alpha`.
//!
//! The spectrum magnitude is deterministic per radius, only phases are
//! random, so ensemble spectral estimates converge fast. Fields are
//! standardized to unit variance so the unit-noise framing of the optimal
//! linear filter applies directly.

use crate::error::{Result, SdError};
use crate::spectral::fft::idft2_raw;
use crate::spectral::radial::radius;
use crate::tensor::Tensor;
use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::PI;

/// `E[|X0(f)|^2] = amplitude / f^exponent`, evaluated at `f > 0`.
#[derive(Clone, Copy, Debug)]
pub struct PowerLawSpectrum {
    amplitude: f64,
    exponent: f64,
}

impl PowerLawSpectrum {
    pub fn new(amplitude: f64, exponent: f64) -> Result<Self> {
        if amplitude <= 0.0 || !amplitude.is_finite() {
            return Err(SdError::InvalidArgument(format!(
                "power-law amplitude must be positive, got {amplitude}"
            )));
        }
        if exponent < 0.0 || !exponent.is_finite() {
            return Err(SdError::InvalidArgument(format!(
                "power-law exponent must be non-negative, got {exponent}"
            )));
        }
        Ok(PowerLawSpectrum {
            amplitude,
            exponent,
        })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    /// Power at radial frequency `f > 0`.
    pub fn power(&self, f: f64) -> Result<f64> {
        if f <= 0.0 {
            return Err(SdError::InvalidArgument(format!(
                "power-law spectrum is defined for f > 0, got {f}"
            )));
        }
        Ok(self.amplitude / f.powf(self.exponent))
    }

    pub fn magnitude(&self, f: f64) -> Result<f64> {
        Ok(self.power(f)?.sqrt())
    }
}

/// Zero-mean real Gaussian-like field whose magnitude spectrum is the
/// deterministic power law with uniform random phases. DC is zero, so the
/// spatial mean is zero by construction; the output is standardized to unit
/// variance.
pub fn sample_power_law_field<R: Rng>(
    spec: &PowerLawSpectrum,
    h: usize,
    w: usize,
    rng: &mut R,
) -> Result<Tensor> {
    if h < 2 || w < 2 {
        return Err(SdError::InvalidArgument(format!(
            "field needs at least 2x2 support, got {h}x{w}"
        )));
    }
    let mut coeffs = vec![Complex64::new(0.0, 0.0); h * w];
    for u in 0..h {
        for v in 0..w {
            if u == 0 && v == 0 {
                continue; // DC stays zero
            }
            let pu = (h - u) % h;
            let pv = (w - v) % w;
            // Assign each conjugate pair once, in row-major order of its
            // canonical member, so the rng stream is deterministic.
            if (pu, pv) < (u, v) {
                continue;
            }
            let mag = spec.magnitude(radius(u, v, h, w))?;
            if (pu, pv) == (u, v) {
                // Self-conjugate (Nyquist) cells must be real.
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                coeffs[u * w + v] = Complex64::new(sign * mag, 0.0);
            } else {
                let phase = rng.random::<f64>() * 2.0 * PI;
                let c = Complex64::new(mag * phase.cos(), mag * phase.sin());
                coeffs[u * w + v] = c;
                coeffs[pu * w + pv] = c.conj();
            }
        }
    }
    let field = idft2_raw(&coeffs, h, w);
    let mut data: Vec<f64> = field.iter().map(|c| c.re).collect();
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(SdError::InvalidArgument(
            "degenerate field: zero variance".to_string(),
        ));
    }
    let inv_std = 1.0 / var.sqrt();
    for v in data.iter_mut() {
        *v *= inv_std;
    }
    Tensor::new(vec![h, w], data)
}
