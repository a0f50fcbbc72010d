//! Wavelet Gating resamplers.
//!
//! Both resamplers share the same gate head: a global average pool feeds a
//! two-layer FFN whose sigmoid output is one gate per band per channel, in
//! the fixed block order (LL, LH, HL, HH).
//!
//! WG-Down: DWT, gate each band, then fuse the four gated bands by
//! summation -> `[C, H/2, W/2]`.
//! WG-Up: split the input channels into the four band chunks, gate, then
//! IDWT -> `[C/4 * ... ]`, doubling the spatial dims.

use crate::error::{Result, SdError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;
use rand::Rng;

/// Per-channel gates split by band; sigmoid outputs, so strictly in (0,1).
#[derive(Clone, Debug)]
pub struct GatingVector {
    pub ll: Vec<f64>,
    pub lh: Vec<f64>,
    pub hl: Vec<f64>,
    pub hh: Vec<f64>,
}

impl GatingVector {
    /// Splits a flat `[4C]` gate vector laid out in band blocks.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 4 != 0 {
            return Err(SdError::InvalidArgument(format!(
                "gate vector length {} not divisible by 4",
                flat.len()
            )));
        }
        let c = flat.len() / 4;
        Ok(GatingVector {
            ll: flat[..c].to_vec(),
            lh: flat[c..2 * c].to_vec(),
            hl: flat[2 * c..3 * c].to_vec(),
            hh: flat[3 * c..].to_vec(),
        })
    }

    pub fn band_means(&self) -> [f64; 4] {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        [
            mean(&self.ll),
            mean(&self.lh),
            mean(&self.hl),
            mean(&self.hh),
        ]
    }

    pub fn all_in_unit_interval(&self) -> bool {
        [&self.ll, &self.lh, &self.hl, &self.hh]
            .iter()
            .all(|band| band.iter().all(|&g| g > 0.0 && g < 1.0))
    }
}

/// Two-layer gate head: `in_dim -> in_dim -> 4 * band_channels`.
#[derive(Clone, Debug)]
pub struct GateFfn {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Graph handles for one bound [`GateFfn`].
#[derive(Clone, Copy, Debug)]
pub struct GateBinds {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl GateFfn {
    /// The second layer starts at zero so every gate opens at 0.5.
    pub fn new<R: Rng>(in_dim: usize, band_channels: usize, rng: &mut R) -> Self {
        let std = (1.0 / in_dim as f64).sqrt();
        GateFfn {
            w1: Tensor::randn_scaled(&[in_dim, in_dim], std, rng).with_grad(),
            b1: Tensor::zeros(&[in_dim]).with_grad(),
            w2: Tensor::zeros(&[in_dim, 4 * band_channels]).with_grad(),
            b2: Tensor::zeros(&[4 * band_channels]).with_grad(),
        }
    }

    /// All-zero head (gates exactly 0.5 for any input).
    pub fn zeroed(in_dim: usize, band_channels: usize) -> Self {
        GateFfn {
            w1: Tensor::zeros(&[in_dim, in_dim]).with_grad(),
            b1: Tensor::zeros(&[in_dim]).with_grad(),
            w2: Tensor::zeros(&[in_dim, 4 * band_channels]).with_grad(),
            b2: Tensor::zeros(&[4 * band_channels]).with_grad(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w2.shape()[1]
    }

    pub fn bind(&self, g: &mut Graph) -> GateBinds {
        GateBinds {
            w1: g.leaf(&self.w1),
            b1: g.leaf(&self.b1),
            w2: g.leaf(&self.w2),
            b2: g.leaf(&self.b2),
        }
    }

    pub fn pull_grads(&mut self, g: &Graph, binds: &GateBinds) {
        g.pull_grad(binds.w1, &mut self.w1);
        g.pull_grad(binds.b1, &mut self.b1);
        g.pull_grad(binds.w2, &mut self.w2);
        g.pull_grad(binds.b2, &mut self.b2);
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Soft gating mask `sigmoid(FFN(avgpool(x)))` as a flat `[4 * band_c]` node.
pub fn wavelet_gate(g: &mut Graph, x: Var, binds: &GateBinds) -> Result<Var> {
    let pooled = g.avgpool_global(x)?;
    let in_dim = g.shape(pooled)[0];
    if g.shape(binds.w1)[0] != in_dim {
        return Err(SdError::ShapeMismatch {
            op: "wavelet_gate",
            left: vec![in_dim],
            right: g.shape(binds.w1).to_vec(),
        });
    }
    let row = g.reshape(pooled, &[1, in_dim])?;
    let h = g.linear(row, binds.w1, binds.b1)?;
    let h = g.silu(h);
    let out = g.linear(h, binds.w2, binds.b2)?;
    let flat_len = g.shape(out)[1];
    let flat = g.reshape(out, &[flat_len])?;
    Ok(g.sigmoid(flat))
}

/// A resampler output together with the gate values that produced it.
pub struct WgOut {
    pub out: Var,
    pub gates: Var,
}

fn gates_or_forced(
    g: &mut Graph,
    x: Var,
    binds: &GateBinds,
    forced: Option<&[f64]>,
    expected_len: usize,
) -> Result<Var> {
    match forced {
        Some(vals) => {
            if vals.len() != expected_len {
                return Err(SdError::InvalidArgument(format!(
                    "forced gates: expected {expected_len} values, got {}",
                    vals.len()
                )));
            }
            Ok(g.constant(&[expected_len], vals.to_vec()))
        }
        None => {
            let gates = wavelet_gate(g, x, binds)?;
            if g.shape(gates)[0] != expected_len {
                return Err(SdError::ShapeMismatch {
                    op: "wavelet_gate",
                    left: vec![expected_len],
                    right: g.shape(gates).to_vec(),
                });
            }
            Ok(gates)
        }
    }
}

/// WG-Down: `[C, H, W] -> [C, H/2, W/2]`. The gate head reads the
/// pre-transform feature; `forced` overrides the gates (test hook).
pub fn wg_down(
    g: &mut Graph,
    x: Var,
    binds: &GateBinds,
    forced: Option<&[f64]>,
) -> Result<WgOut> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0 {
        return Err(SdError::InvalidArgument(format!(
            "wg_down expects [C,H,W] with even dims, got {:?}",
            s
        )));
    }
    let gates = gates_or_forced(g, x, binds, forced, 4 * s[0])?;
    let bands = g.dwt2d(x)?;
    let gcol = g.reshape(gates, &[4 * s[0], 1, 1])?;
    let gated = g.mul(bands, gcol)?;
    let out = g.band_sum4(gated)?;
    Ok(WgOut { out, gates })
}

/// WG-Up: `[4C, H, W] -> [C, 2H, 2W]` with the channel chunks interpreted
/// as (LL, LH, HL, HH) coefficients.
pub fn wg_up(g: &mut Graph, x: Var, binds: &GateBinds, forced: Option<&[f64]>) -> Result<WgOut> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 || s[0] % 4 != 0 {
        return Err(SdError::InvalidArgument(format!(
            "wg_up expects [4C,H,W], got {:?}",
            s
        )));
    }
    let gates = gates_or_forced(g, x, binds, forced, s[0])?;
    let gcol = g.reshape(gates, &[s[0], 1, 1])?;
    let gated = g.mul(x, gcol)?;
    let out = g.idwt2d(gated)?;
    Ok(WgOut { out, gates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check;
    use crate::spectral::haar::dwt2_stacked_raw;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn randvec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn zero_ffn_gives_half_gates() {
        let ffn = GateFfn::zeroed(2, 2);
        let mut g = Graph::new();
        let x = g.constant(&[2, 4, 4], randvec(32, 1));
        let binds = ffn.bind(&mut g);
        let gates = wavelet_gate(&mut g, x, &binds).unwrap();
        for v in g.value(gates) {
            assert_eq!(*v, 0.5);
        }
        let gv = GatingVector::from_flat(g.value(gates)).unwrap();
        assert!(gv.all_in_unit_interval());
        assert_eq!(gv.band_means(), [0.5; 4]);
    }

    #[test]
    fn large_bias_saturates_one_band() {
        let mut ffn = GateFfn::zeroed(2, 2);
        // +10 bias on the LH block (channels 2..4 of the flat layout).
        ffn.b2.data_mut()[2] = 10.0;
        ffn.b2.data_mut()[3] = 10.0;
        let mut g = Graph::new();
        let x = g.constant(&[2, 4, 4], randvec(32, 2));
        let binds = ffn.bind(&mut g);
        let gates = wavelet_gate(&mut g, x, &binds).unwrap();
        let gv = GatingVector::from_flat(g.value(gates)).unwrap();
        for v in &gv.lh {
            assert!(*v > 0.9999, "saturated gate {v}");
        }
        for v in gv.ll.iter().chain(&gv.hl).chain(&gv.hh) {
            assert_eq!(*v, 0.5);
        }
    }

    #[test]
    fn gate_gradients_reach_the_ffn() {
        let c = 2;
        let x_data = randvec(c * 4 * 4, 3);
        let ffn = GateFfn::new(c, c, &mut ChaCha12Rng::seed_from_u64(4));

        let flat0: Vec<f64> = ffn
            .tensors()
            .iter()
            .flat_map(|t| t.data().to_vec())
            .collect();
        let sizes: Vec<usize> = ffn.tensors().iter().map(|t| t.numel()).collect();

        let eval = |v: &[f64]| {
            let mut ffn2 = ffn.clone();
            let mut off = 0;
            for (t, &n) in ffn2.tensors_mut().into_iter().zip(&sizes) {
                t.data_mut().copy_from_slice(&v[off..off + n]);
                off += n;
            }
            let mut g = Graph::new();
            let x = g.constant(&[c, 4, 4], x_data.clone());
            let binds = ffn2.bind(&mut g);
            let out = wg_down(&mut g, x, &binds, None).unwrap();
            let l = g.sum(out.out);
            g.scalar_value(l)
        };
        let fd = check::numeric_gradient(&mut |v: &[f64]| eval(v), &flat0, 1e-6);

        let mut g = Graph::new();
        let x = g.constant(&[c, 4, 4], x_data.clone());
        let binds = ffn.bind(&mut g);
        let out = wg_down(&mut g, x, &binds, None).unwrap();
        let l = g.sum(out.out);
        g.backward(l).unwrap();
        let mut analytic = Vec::new();
        for v in [binds.w1, binds.b1, binds.w2, binds.b2] {
            analytic.extend_from_slice(g.grad(v).unwrap());
        }
        assert!(check::max_rel_err(&analytic, &fd) < 1e-4);
    }

    #[test]
    fn forced_ll_gate_reproduces_the_ll_band() {
        let (c, h, w) = (1usize, 4usize, 4usize);
        let data = randvec(c * h * w, 5);
        let expected = dwt2_stacked_raw(&data, c, h, w); // LL block first

        let ffn = GateFfn::zeroed(c, c);
        let mut g = Graph::new();
        let x = g.constant(&[c, h, w], data);
        let binds = ffn.bind(&mut g);
        let forced = vec![1.0, 0.0, 0.0, 0.0];
        let out = wg_down(&mut g, x, &binds, Some(&forced)).unwrap();
        assert_eq!(g.shape(out.out), &[1, 2, 2]);
        for (got, want) in g.value(out.out).iter().zip(&expected[..4]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_input_passes_only_through_ll() {
        let cval = 1.7;
        let ffn = GateFfn::zeroed(1, 1);
        let mut g = Graph::new();
        let x = g.constant(&[1, 4, 4], vec![cval; 16]);
        let binds = ffn.bind(&mut g);
        let forced = vec![0.25, 0.9, 0.8, 0.7]; // details are all zero anyway
        let out = wg_down(&mut g, x, &binds, Some(&forced)).unwrap();
        for v in g.value(out.out) {
            assert!((v - 0.25 * 2.0 * cval).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_gates_make_wg_up_invert_the_band_split() {
        let (c, h, w) = (2usize, 8usize, 8usize);
        let data = randvec(c * h * w, 6);
        let bands = dwt2_stacked_raw(&data, c, h, w);

        let ffn = GateFfn::zeroed(4 * c, c);
        let mut g = Graph::new();
        let x = g.constant(&[4 * c, h / 2, w / 2], bands);
        let binds = ffn.bind(&mut g);
        let forced = vec![1.0; 4 * c];
        let out = wg_up(&mut g, x, &binds, Some(&forced)).unwrap();
        assert_eq!(g.shape(out.out), &[c, h, w]);
        for (got, want) in g.value(out.out).iter().zip(&data) {
            assert!((got - want).abs() <= 1e-10);
        }
    }

    #[test]
    fn wg_up_of_zeros_is_zero_and_ll_chunk_upsamples_constants() {
        let ffn = GateFfn::zeroed(4, 1);
        let mut g = Graph::new();
        let x = g.constant(&[4, 2, 2], vec![0.0; 16]);
        let binds = ffn.bind(&mut g);
        let out = wg_up(&mut g, x, &binds, None).unwrap();
        assert!(g.value(out.out).iter().all(|&v| v == 0.0));

        // LL chunk = 2c constant, others zero, gates (1,0,0,0) -> constant c.
        let cval = 0.6;
        let mut data = vec![0.0; 16];
        for v in data.iter_mut().take(4) {
            *v = 2.0 * cval;
        }
        let mut g = Graph::new();
        let x = g.constant(&[4, 2, 2], data);
        let binds = ffn.bind(&mut g);
        let out = wg_up(&mut g, x, &binds, Some(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        for v in g.value(out.out) {
            assert!((v - cval).abs() < 1e-12);
        }
    }

    #[test]
    fn wg_up_rejects_channel_counts_not_divisible_by_four() {
        let ffn = GateFfn::zeroed(3, 1);
        let mut g = Graph::new();
        let x = g.constant(&[3, 2, 2], vec![0.0; 12]);
        let binds = ffn.bind(&mut g);
        assert!(wg_up(&mut g, x, &binds, None).is_err());
    }

    #[test]
    fn wg_down_rejects_odd_dims() {
        let ffn = GateFfn::zeroed(1, 1);
        let mut g = Graph::new();
        let x = g.constant(&[1, 3, 4], vec![0.0; 12]);
        let binds = ffn.bind(&mut g);
        assert!(wg_down(&mut g, x, &binds, None).is_err());
    }
}
