//! Discrete Fourier transforms.
//!
//! Forward transform is the unnormalized sum
//! `X(u,v) = sum_{x,y} x(x,y) exp(-2*pi*i*(u*x/H + v*y/W))`; the inverse
//! carries the `1/(H*W)` factor. Power-of-two lengths go through an
//! iterative radix-2 FFT, everything else through the direct sum. The two
//! routes must agree to 1e-9 and are tested against each other.

use crate::error::{Result, SdError};
use crate::tensor::Tensor;
use num_complex::Complex64;
use std::f64::consts::PI;

/// Complex DFT coefficients of a 2D signal, row-major, DC at index (0,0)
/// unless `dc_centered` is set.
#[derive(Clone, Debug)]
pub struct SpectrumGrid {
    height: usize,
    width: usize,
    coeffs: Vec<Complex64>,
    dc_centered: bool,
}

impl SpectrumGrid {
    pub fn from_coeffs(height: usize, width: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != height * width {
            return Err(SdError::InvalidArgument(format!(
                "spectrum of {}x{} needs {} coefficients, got {}",
                height,
                width,
                height * width,
                coeffs.len()
            )));
        }
        Ok(SpectrumGrid {
            height,
            width,
            coeffs,
            dc_centered: false,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dc_centered(&self) -> bool {
        self.dc_centered
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeff(&self, u: usize, v: usize) -> Complex64 {
        self.coeffs[u * self.width + v]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.norm()).collect()
    }

    pub fn power(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.norm_sqr()).collect()
    }

    /// fftshift: moves DC to the grid center (for report/image dumps).
    pub fn centered(&self) -> SpectrumGrid {
        let (h, w) = (self.height, self.width);
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for u in 0..h {
            for v in 0..w {
                let cu = (u + h / 2) % h;
                let cv = (v + w / 2) % w;
                out[cu * w + cv] = self.coeffs[u * w + v];
            }
        }
        SpectrumGrid {
            height: h,
            width: w,
            coeffs: out,
            dc_centered: true,
        }
    }

    /// Largest deviation from Hermitian symmetry; 0 for the DFT of a real signal.
    pub fn hermitian_asymmetry(&self) -> f64 {
        let (h, w) = (self.height, self.width);
        let mut worst = 0.0f64;
        for u in 0..h {
            for v in 0..w {
                let partner = self.coeffs[((h - u) % h) * w + (w - v) % w].conj();
                let d = (self.coeffs[u * w + v] - partner).norm();
                worst = worst.max(d);
            }
        }
        worst
    }
}

fn is_pow2(n: usize) -> bool {
    n > 0 && n & (n - 1) == 0
}

/// Iterative radix-2 Cooley-Tukey; `sign = -1` forward, `+1` inverse
/// (unnormalized).
fn fft_radix2(buf: &mut [Complex64], sign: f64) {
    let n = buf.len();
    debug_assert!(is_pow2(n));
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        let wlen = Complex64::new(ang.cos(), ang.sin());
        let half = len / 2;
        let mut start = 0;
        while start < n {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..half {
                let u = buf[start + k];
                let v = buf[start + k + half] * w;
                buf[start + k] = u + v;
                buf[start + k + half] = u - v;
                w *= wlen;
            }
            start += len;
        }
        len <<= 1;
    }
}

/// Direct O(n^2) DFT sum; phases reduced mod n for accuracy.
fn dft_direct(line: &[Complex64], sign: f64) -> Vec<Complex64> {
    let n = line.len();
    let base = sign * 2.0 * PI / n as f64;
    (0..n)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (idx, v) in line.iter().enumerate() {
                let ang = base * ((k * idx) % n) as f64;
                acc += v * Complex64::new(ang.cos(), ang.sin());
            }
            acc
        })
        .collect()
}

fn transform_line(line: &mut Vec<Complex64>, sign: f64, force_direct: bool) {
    if !force_direct && is_pow2(line.len()) && line.len() > 1 {
        fft_radix2(line, sign);
    } else {
        *line = dft_direct(line, sign);
    }
}

fn transform_2d(data: &mut [Complex64], h: usize, w: usize, sign: f64, force_direct: bool) {
    let mut row = Vec::with_capacity(w);
    for r in 0..h {
        row.clear();
        row.extend_from_slice(&data[r * w..(r + 1) * w]);
        transform_line(&mut row, sign, force_direct);
        data[r * w..(r + 1) * w].copy_from_slice(&row);
    }
    let mut col = Vec::with_capacity(h);
    for c in 0..w {
        col.clear();
        col.extend((0..h).map(|r| data[r * w + c]));
        transform_line(&mut col, sign, force_direct);
        for (r, v) in col.iter().enumerate() {
            data[r * w + c] = *v;
        }
    }
}

/// Forward 2D DFT of real data, raw buffer form.
pub fn dft2_raw(data: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_2d(&mut buf, h, w, -1.0, false);
    buf
}

/// Forward 2D DFT via the direct summation only (oracle route).
pub fn dft2_direct_raw(data: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_2d(&mut buf, h, w, -1.0, true);
    buf
}

/// Inverse 2D DFT (with the 1/(H*W) factor), raw buffer form.
pub fn idft2_raw(coeffs: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut buf = coeffs.to_vec();
    transform_2d(&mut buf, h, w, 1.0, false);
    let scale = 1.0 / (h * w) as f64;
    for c in buf.iter_mut() {
        *c *= scale;
    }
    buf
}

/// Forward 2D DFT of a `[H, W]` tensor.
pub fn dft2(x: &Tensor) -> Result<SpectrumGrid> {
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(SdError::InvalidArgument(format!(
            "dft2 expects a [H, W] tensor, got {:?}",
            shape
        )));
    }
    let (h, w) = (shape[0], shape[1]);
    SpectrumGrid::from_coeffs(h, w, dft2_raw(x.data(), h, w))
}

/// Inverse of [`dft2`]; returns the real part and the largest imaginary
/// residue (which should be at rounding level for Hermitian inputs).
pub fn idft2(spec: &SpectrumGrid) -> (Tensor, f64) {
    let buf = idft2_raw(spec.coeffs(), spec.height, spec.width);
    let mut max_imag = 0.0f64;
    let data: Vec<f64> = buf
        .iter()
        .map(|c| {
            max_imag = max_imag.max(c.im.abs());
            c.re
        })
        .collect();
    let t = Tensor::new(vec![spec.height, spec.width], data).expect("shape agrees");
    (t, max_imag)
}

/// Forward 1D DFT of real data.
pub fn dft1_raw(data: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_line(&mut buf, -1.0, false);
    buf
}
