//! Radial spectrum profiles.
//!
//! Frequencies are measured in cycles per image: the signed centered
//! frequency of index `i` on an axis of length `n` is `i` for `i <= n/2` and
//! `i - n` otherwise, and the radius is the Euclidean norm of the signed
//! pair. Linear bins partition `(0, r_max]`; the DC coefficient is excluded,
//! so the bin counts always sum to `H*W - 1`.

use crate::error::{Result, SdError};
use crate::spectral::fft::SpectrumGrid;
use std::io::Write;

#[derive(Clone, Debug)]
pub struct RadialProfile {
    /// `n_bins + 1` edges spanning `[0, r_max]`.
    pub bin_edges: Vec<f64>,
    /// Mean coefficient magnitude per bin (0.0 for empty bins).
    pub mean_magnitude: Vec<f64>,
    /// Number of coefficients that fell in each bin.
    pub count: Vec<usize>,
}

impl RadialProfile {
    pub fn n_bins(&self) -> usize {
        self.mean_magnitude.len()
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        0.5 * (self.bin_edges[k] + self.bin_edges[k + 1])
    }

    /// `bin_center_freq,mean_magnitude,count` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bin_center_freq,mean_magnitude,count")?;
        for k in 0..self.n_bins() {
            writeln!(
                out,
                "{},{},{}",
                self.bin_center(k),
                self.mean_magnitude[k],
                self.count[k]
            )?;
        }
        Ok(())
    }
}

/// Signed centered frequency of index `i` on an axis of length `n`.
pub fn signed_freq(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Radial frequency of grid cell `(u, v)` in cycles per image.
pub fn radius(u: usize, v: usize, h: usize, w: usize) -> f64 {
    let fu = signed_freq(u, h) as f64;
    let fv = signed_freq(v, w) as f64;
    (fu * fu + fv * fv).sqrt()
}

/// Largest radius on an `h x w` grid.
pub fn r_max(h: usize, w: usize) -> f64 {
    let fu = (h / 2) as f64;
    let fv = (w / 2) as f64;
    (fu * fu + fv * fv).sqrt()
}

/// Bin index for radius `r` in linear bins over `(0, r_max]`.
pub fn bin_index(r: f64, r_max: f64, n_bins: usize) -> usize {
    debug_assert!(r > 0.0);
    let idx = (r * n_bins as f64 / r_max).ceil() as usize;
    idx.saturating_sub(1).min(n_bins - 1)
}

/// Radial profile of per-cell magnitudes laid out as an `h x w` grid with DC
/// at `(0, 0)`.
pub fn profile_from_magnitudes(
    mags: &[f64],
    h: usize,
    w: usize,
    n_bins: usize,
) -> Result<RadialProfile> {
    if n_bins < 2 {
        return Err(SdError::InvalidArgument(format!(
            "radial profile needs at least 2 bins, got {n_bins}"
        )));
    }
    if mags.len() != h * w {
        return Err(SdError::InvalidArgument(format!(
            "magnitude grid of {}x{} needs {} values, got {}",
            h,
            w,
            h * w,
            mags.len()
        )));
    }
    let rm = r_max(h, w);
    let mut sum = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for u in 0..h {
        for v in 0..w {
            if u == 0 && v == 0 {
                continue;
            }
            let k = bin_index(radius(u, v, h, w), rm, n_bins);
            sum[k] += mags[u * w + v];
            count[k] += 1;
        }
    }
    let mean_magnitude = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let bin_edges = (0..=n_bins)
        .map(|k| rm * k as f64 / n_bins as f64)
        .collect();
    Ok(RadialProfile {
        bin_edges,
        mean_magnitude,
        count,
    })
}

/// Radial profile of a spectrum's coefficient magnitudes.
pub fn radial_profile(spec: &SpectrumGrid, n_bins: usize) -> Result<RadialProfile> {
    if spec.dc_centered() {
        return Err(SdError::InvalidArgument(
            "radial_profile expects an uncentered spectrum (DC at (0,0))".to_string(),
        ));
    }
    profile_from_magnitudes(&spec.magnitudes(), spec.height(), spec.width(), n_bins)
}
