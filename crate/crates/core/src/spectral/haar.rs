//! Single-level orthonormal Haar wavelet transforms.
//!
//! 2D analysis on each 2x2 block (a b / c d):
//! `ll = (a+b+c+d)/2`, `lh = (a-b+c-d)/2`, `hl = (a+b-c-d)/2`,
//! `hh = (a-b-c+d)/2`. `lh` carries horizontal-frequency (vertical-edge)
//! detail, `hl` vertical-frequency detail; the transform is orthonormal, so
//! energy is preserved and the adjoint equals the inverse.
//!
//! Stacked-layout helpers put the four bands along the channel axis in the
//! fixed order (LL, LH, HL, HH), which is also the chunk order the gating
//! resamplers use.

use crate::error::{Result, SdError};
use crate::tensor::Tensor;

pub const SQRT2_INV: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// The four single-level 2D bands, each `[C, H/2, W/2]`.
#[derive(Clone, Debug)]
pub struct WaveletBands {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

impl WaveletBands {
    pub fn band_shape(&self) -> &[usize] {
        self.ll.shape()
    }

    /// Total energy split per band; sums to the input energy.
    pub fn band_energies(&self) -> [f64; 4] {
        let e = |t: &Tensor| t.data().iter().map(|v| v * v).sum();
        [e(&self.ll), e(&self.lh), e(&self.hl), e(&self.hh)]
    }

    /// Stacks the bands along the channel axis as `[4C, H/2, W/2]`.
    pub fn stack(&self) -> Tensor {
        let s = self.ll.shape();
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut data = Vec::with_capacity(4 * c * h * w);
        for band in [&self.ll, &self.lh, &self.hl, &self.hh] {
            data.extend_from_slice(band.data());
        }
        Tensor::new(vec![4 * c, h, w], data).expect("band shapes agree")
    }

    /// Inverse of [`WaveletBands::stack`].
    pub fn from_stacked(stacked: &Tensor) -> Result<Self> {
        let s = stacked.shape();
        if s.len() != 3 || s[0] % 4 != 0 {
            return Err(SdError::InvalidArgument(format!(
                "stacked bands need shape [4C, h, w], got {:?}",
                s
            )));
        }
        let c = s[0] / 4;
        let plane = c * s[1] * s[2];
        let grab = |i: usize| {
            Tensor::new(
                vec![c, s[1], s[2]],
                stacked.data()[i * plane..(i + 1) * plane].to_vec(),
            )
            .expect("length agrees")
        };
        Ok(WaveletBands {
            ll: grab(0),
            lh: grab(1),
            hl: grab(2),
            hh: grab(3),
        })
    }
}

/// Raw analysis kernel: `[C, H, W]` -> `[4C, H/2, W/2]` stacked bands.
pub fn dwt2_stacked_raw(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let (hh2, wh2) = (h / 2, w / 2);
    let band = c * hh2 * wh2;
    let mut out = vec![0.0; 4 * band];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for i in 0..hh2 {
            for j in 0..wh2 {
                let a = src[(2 * i) * w + 2 * j];
                let b = src[(2 * i) * w + 2 * j + 1];
                let cc = src[(2 * i + 1) * w + 2 * j];
                let d = src[(2 * i + 1) * w + 2 * j + 1];
                let idx = ch * hh2 * wh2 + i * wh2 + j;
                out[idx] = (a + b + cc + d) / 2.0;
                out[band + idx] = (a - b + cc - d) / 2.0;
                out[2 * band + idx] = (a + b - cc - d) / 2.0;
                out[3 * band + idx] = (a - b - cc + d) / 2.0;
            }
        }
    }
    out
}

/// Raw synthesis kernel: `[4C, h, w]` stacked bands -> `[C, 2h, 2w]`.
pub fn idwt2_stacked_raw(bands: &[f64], c4: usize, h: usize, w: usize) -> Vec<f64> {
    debug_assert!(c4 % 4 == 0);
    let c = c4 / 4;
    let band = c * h * w;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for i in 0..h {
            for j in 0..w {
                let idx = ch * h * w + i * w + j;
                let ll = bands[idx];
                let lh = bands[band + idx];
                let hl = bands[2 * band + idx];
                let hh = bands[3 * band + idx];
                dst[(2 * i) * ow + 2 * j] = (ll + lh + hl + hh) / 2.0;
                dst[(2 * i) * ow + 2 * j + 1] = (ll - lh + hl - hh) / 2.0;
                dst[(2 * i + 1) * ow + 2 * j] = (ll + lh - hl - hh) / 2.0;
                dst[(2 * i + 1) * ow + 2 * j + 1] = (ll - lh - hl + hh) / 2.0;
            }
        }
    }
    out
}

fn check_chw(x: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(SdError::InvalidArgument(format!(
            "{op} expects [C, H, W], got {:?}",
            s
        )));
    }
    Ok((s[0], s[1], s[2]))
}

/// Single-level 2D Haar analysis of a `[C, H, W]` tensor (H, W even).
pub fn dwt_haar_2d(x: &Tensor) -> Result<WaveletBands> {
    let (c, h, w) = check_chw(x, "dwt_haar_2d")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(SdError::InvalidArgument(format!(
            "dwt_haar_2d needs even spatial dims, got {h}x{w}"
        )));
    }
    let stacked = dwt2_stacked_raw(x.data(), c, h, w);
    let t = Tensor::new(vec![4 * c, h / 2, w / 2], stacked)?;
    WaveletBands::from_stacked(&t)
}

/// Exact inverse of [`dwt_haar_2d`].
pub fn idwt_haar_2d(bands: &WaveletBands) -> Result<Tensor> {
    for (name, t) in [("lh", &bands.lh), ("hl", &bands.hl), ("hh", &bands.hh)] {
        if t.shape() != bands.ll.shape() {
            return Err(SdError::ShapeMismatch {
                op: "idwt_haar_2d",
                left: bands.ll.shape().to_vec(),
                right: t.shape().to_vec(),
            });
        }
        let _ = name;
    }
    let stacked = bands.stack();
    let s = stacked.shape().to_vec();
    let data = idwt2_stacked_raw(stacked.data(), s[0], s[1], s[2]);
    Tensor::new(vec![s[0] / 4, 2 * s[1], 2 * s[2]], data)
}

/// 1D pair analysis: approx = (a+b)/sqrt(2), detail = (a-b)/sqrt(2).
pub fn dwt_haar_1d(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let s = x.shape();
    if s.len() != 1 || s[0] % 2 != 0 {
        return Err(SdError::InvalidArgument(format!(
            "dwt_haar_1d expects an even-length vector, got {:?}",
            s
        )));
    }
    let n = s[0] / 2;
    let mut approx = vec![0.0; n];
    let mut detail = vec![0.0; n];
    for i in 0..n {
        let a = x.data()[2 * i];
        let b = x.data()[2 * i + 1];
        approx[i] = (a + b) * SQRT2_INV;
        detail[i] = (a - b) * SQRT2_INV;
    }
    Ok((Tensor::new(vec![n], approx)?, Tensor::new(vec![n], detail)?))
}

/// Exact inverse of [`dwt_haar_1d`].
pub fn idwt_haar_1d(approx: &Tensor, detail: &Tensor) -> Result<Tensor> {
    if approx.shape() != detail.shape() || approx.shape().len() != 1 {
        return Err(SdError::ShapeMismatch {
            op: "idwt_haar_1d",
            left: approx.shape().to_vec(),
            right: detail.shape().to_vec(),
        });
    }
    let n = approx.shape()[0];
    let mut out = vec![0.0; 2 * n];
    for i in 0..n {
        let ap = approx.data()[i];
        let de = detail.data()[i];
        out[2 * i] = (ap + de) * SQRT2_INV;
        out[2 * i + 1] = (ap - de) * SQRT2_INV;
    }
    Tensor::new(vec![2 * n], out)
}
