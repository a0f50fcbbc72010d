//! Define-by-run reverse-mode differentiation.
//!
//! A `Graph` is an append-only tape of op records; it is rebuilt for every
//! forward pass. `backward` walks the tape in reverse creation order (which
//! is a topological order by construction), computes a fresh pass of
//! gradients, and adds them into each node's persistent `grad` buffer, so
//! repeated calls without zeroing accumulate.
//!
//! Only trailing-singleton broadcasting is supported for elementwise ops:
//! the right operand may replace a contiguous suffix of axes by 1s
//! (e.g. `[C,1,1]` against `[C,H,W]`). Row biases go through the fused
//! `linear` op instead.

use crate::error::{Result, SdError};
use crate::spectral::fft::{dft2_raw, idft2_raw};
use crate::spectral::haar::{dwt2_stacked_raw, idwt2_stacked_raw};
use crate::tensor::Tensor;
use num_complex::Complex64;
use rayon::prelude::*;
use std::sync::Arc;

/// Handle to a node in one particular [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf { requires_grad: bool },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: f64 },
    Sigmoid { a: Var },
    Silu { a: Var },
    Relu { a: Var },
    Matmul { a: Var, b: Var },
    Linear { x: Var, w: Var, b: Var },
    ConcatCols { a: Var, b: Var },
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    AvgPoolGlobal { x: Var },
    Upsample2x { x: Var },
    Dwt2d { x: Var },
    Idwt2d { x: Var },
    BandSum4 { x: Var },
    Reshape { x: Var },
    EmbedRow { table: Var, row: usize },
    Sum { x: Var },
    Mean { x: Var },
    SpectralSqNorm { x: Var, weights: Arc<Vec<f64>> },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Serial matmuls below this work size; parallelizing tiny products costs
/// more than it saves. Accumulation order per output element is identical
/// either way, so results are bitwise equal.
const PAR_MATMUL_WORK: usize = 1 << 16;

fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    let body = |i: usize, row: &mut [f64]| {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    };
    if m * k * n >= PAR_MATMUL_WORK {
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| body(i, row));
    } else {
        for (i, row) in out.chunks_mut(n).enumerate() {
            body(i, row);
        }
    }
    out
}

/// `a [m,k] * b^T` where `b` is `[n,k]` -> `[m,n]`.
fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    let body = |i: usize, row: &mut [f64]| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o = acc;
        }
    };
    if m * k * n >= PAR_MATMUL_WORK {
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| body(i, row));
    } else {
        for (i, row) in out.chunks_mut(n).enumerate() {
            body(i, row);
        }
    }
    out
}

/// `a^T * b` where `a` is `[m,k]`, `b` is `[m,n]` -> `[k,n]`.
fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    let body = |p: usize, row: &mut [f64]| {
        for i in 0..m {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[i * n..(i + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    };
    if m * k * n >= PAR_MATMUL_WORK {
        out.par_chunks_mut(n).enumerate().for_each(|(p, row)| body(p, row));
    } else {
        for (p, row) in out.chunks_mut(n).enumerate() {
            body(p, row);
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Broadcast plan for `b` against `a`: either identical shapes or `b` has a
/// singleton suffix. `tail` is the number of `a` elements covered by each
/// `b` element.
fn broadcast_tail(a: &[usize], b: &[usize], op: &'static str) -> Result<usize> {
    if a == b {
        return Ok(1);
    }
    if a.len() == b.len() {
        let mut split = a.len();
        while split > 0 && b[split - 1] == 1 && a[split - 1] != 1 {
            split -= 1;
        }
        if a[..split] == b[..split] && b[split..].iter().all(|&d| d == 1) {
            return Ok(a[split..].iter().product());
        }
    }
    Err(SdError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    })
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            op,
            shape,
            value,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a tensor's current values as a leaf. Gradients flow back to
    /// the leaf node when `requires_grad` is set on the tensor.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            Op::Leaf {
                requires_grad: t.requires_grad,
            },
            t.shape().to_vec(),
            t.data().to_vec(),
        )
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.push(
            Op::Leaf {
                requires_grad: false,
            },
            shape.to_vec(),
            data,
        )
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(&[1], vec![v])
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Accumulated gradient of a node, if any backward pass has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Adds a node's accumulated gradient into the tensor it was built from.
    pub fn pull_grad(&self, v: Var, t: &mut Tensor) {
        if let Some(g) = self.grad(v) {
            t.accumulate_grad(g);
        }
    }

    fn binary_shapes(&self, a: Var, b: Var, op: &'static str) -> Result<(Vec<usize>, usize)> {
        let tail = broadcast_tail(&self.nodes[a.0].shape, &self.nodes[b.0].shape, op)?;
        Ok((self.nodes[a.0].shape.clone(), tail))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, tail) = self.binary_shapes(a, b, "add")?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = av
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i / tail])
            .collect();
        Ok(self.push(Op::Add { a, b }, shape, value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, tail) = self.binary_shapes(a, b, "sub")?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = av
            .iter()
            .enumerate()
            .map(|(i, x)| x - bv[i / tail])
            .collect();
        Ok(self.push(Op::Sub { a, b }, shape, value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, tail) = self.binary_shapes(a, b, "mul")?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = av
            .iter()
            .enumerate()
            .map(|(i, x)| x * bv[i / tail])
            .collect();
        Ok(self.push(Op::Mul { a, b }, shape, value))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let shape = self.nodes[a.0].shape.clone();
        let value = self.nodes[a.0].value.iter().map(|x| x * factor).collect();
        self.push(Op::Scale { a, factor }, shape, value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let shape = self.nodes[a.0].shape.clone();
        let value = self.nodes[a.0].value.iter().map(|&x| sigmoid(x)).collect();
        self.push(Op::Sigmoid { a }, shape, value)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let shape = self.nodes[a.0].shape.clone();
        let value = self
            .nodes[a.0]
            .value
            .iter()
            .map(|&x| x * sigmoid(x))
            .collect();
        self.push(Op::Silu { a }, shape, value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let shape = self.nodes[a.0].shape.clone();
        let value = self.nodes[a.0].value.iter().map(|&x| x.max(0.0)).collect();
        self.push(Op::Relu { a }, shape, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(SdError::ShapeMismatch {
                op: "matmul",
                left: sa.clone(),
                right: sb.clone(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = mm_nn(&self.nodes[a.0].value, &self.nodes[b.0].value, m, k, n);
        Ok(self.push(Op::Matmul { a, b }, vec![m, n], value))
    }

    /// Fused `x*w + bias` with a per-column bias: `[m,k] x [k,n] + [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (
            &self.nodes[x.0].shape,
            &self.nodes[w.0].shape,
            &self.nodes[b.0].shape,
        );
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(SdError::ShapeMismatch {
                op: "linear",
                left: sx.clone(),
                right: sw.clone(),
            });
        }
        if sb.len() != 1 || sb[0] != sw[1] {
            return Err(SdError::ShapeMismatch {
                op: "linear",
                left: sw.clone(),
                right: sb.clone(),
            });
        }
        let (m, k, n) = (sx[0], sx[1], sw[1]);
        let mut value = mm_nn(&self.nodes[x.0].value, &self.nodes[w.0].value, m, k, n);
        let bias = &self.nodes[b.0].value;
        for row in value.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        Ok(self.push(Op::Linear { x, w, b }, vec![m, n], value))
    }

    /// Concatenates two `[m, *]` matrices along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(SdError::ShapeMismatch {
                op: "concat_cols",
                left: sa.clone(),
                right: sb.clone(),
            });
        }
        let (m, ka, kb) = (sa[0], sa[1], sb[1]);
        let mut value = Vec::with_capacity(m * (ka + kb));
        for i in 0..m {
            value.extend_from_slice(&self.nodes[a.0].value[i * ka..(i + 1) * ka]);
            value.extend_from_slice(&self.nodes[b.0].value[i * kb..(i + 1) * kb]);
        }
        Ok(self.push(Op::ConcatCols { a, b }, vec![m, ka + kb], value))
    }

    /// Cross-correlation conv: `x [C,H,W]`, `w [O,C,kh,kw]`, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (&self.nodes[x.0].shape, &self.nodes[w.0].shape);
        if sx.len() != 3 || sw.len() != 4 || sx[0] != sw[1] {
            return Err(SdError::ShapeMismatch {
                op: "conv2d",
                left: sx.clone(),
                right: sw.clone(),
            });
        }
        let (c, h, wd) = (sx[0], sx[1], sx[2]);
        let (o, kh, kw) = (sw[0], sw[2], sw[3]);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(SdError::InvalidArgument(format!(
                "conv2d kernel dims must be odd, got {kh}x{kw}"
            )));
        }
        if stride == 0 || h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(SdError::InvalidArgument(format!(
                "conv2d: {h}x{wd} input too small for kernel {kh}x{kw} pad {pad} stride {stride}"
            )));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let mut value = vec![0.0; o * ho * wo];
        for oc in 0..o {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for p in 0..kh {
                            let ii = (i * stride + p) as isize - pad as isize;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for q in 0..kw {
                                let jj = (j * stride + q) as isize - pad as isize;
                                if jj < 0 || jj >= wd as isize {
                                    continue;
                                }
                                acc += xv[ic * h * wd + ii as usize * wd + jj as usize]
                                    * wv[((oc * c + ic) * kh + p) * kw + q];
                            }
                        }
                    }
                    value[oc * ho * wo + i * wo + j] = acc;
                }
            }
        }
        Ok(self.push(Op::Conv2d { x, w, stride, pad }, vec![o, ho, wo], value))
    }

    /// Per-channel spatial mean: `[C,H,W] -> [C]`.
    pub fn avgpool_global(&mut self, x: Var) -> Result<Var> {
        let s = &self.nodes[x.0].shape;
        if s.len() != 3 {
            return Err(SdError::InvalidArgument(format!(
                "avgpool_global expects [C,H,W], got {:?}",
                s
            )));
        }
        let (c, plane) = (s[0], s[1] * s[2]);
        let xv = &self.nodes[x.0].value;
        let value = (0..c)
            .map(|ch| xv[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
            .collect();
        Ok(self.push(Op::AvgPoolGlobal { x }, vec![c], value))
    }

    /// Nearest-neighbour 2x upsample: `[C,H,W] -> [C,2H,2W]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = &self.nodes[x.0].shape;
        if s.len() != 3 {
            return Err(SdError::InvalidArgument(format!(
                "upsample2x expects [C,H,W], got {:?}",
                s
            )));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let xv = &self.nodes[x.0].value;
        let mut value = vec![0.0; c * 4 * h * w];
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let v = xv[ch * h * w + i * w + j];
                    let base = ch * 4 * h * w;
                    value[base + (2 * i) * 2 * w + 2 * j] = v;
                    value[base + (2 * i) * 2 * w + 2 * j + 1] = v;
                    value[base + (2 * i + 1) * 2 * w + 2 * j] = v;
                    value[base + (2 * i + 1) * 2 * w + 2 * j + 1] = v;
                }
            }
        }
        Ok(self.push(Op::Upsample2x { x }, vec![c, 2 * h, 2 * w], value))
    }

    /// Differentiable Haar analysis, bands stacked as `[4C, H/2, W/2]` in
    /// (LL, LH, HL, HH) order. Orthonormal, so backward applies the inverse.
    pub fn dwt2d(&mut self, x: Var) -> Result<Var> {
        let s = &self.nodes[x.0].shape;
        if s.len() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0 {
            return Err(SdError::InvalidArgument(format!(
                "dwt2d expects [C,H,W] with even H,W, got {:?}",
                s
            )));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let value = dwt2_stacked_raw(&self.nodes[x.0].value, c, h, w);
        Ok(self.push(Op::Dwt2d { x }, vec![4 * c, h / 2, w / 2], value))
    }

    /// Differentiable Haar synthesis: `[4C, h, w] -> [C, 2h, 2w]`.
    pub fn idwt2d(&mut self, x: Var) -> Result<Var> {
        let s = &self.nodes[x.0].shape;
        if s.len() != 3 || s[0] % 4 != 0 {
            return Err(SdError::InvalidArgument(format!(
                "idwt2d expects [4C,h,w], got {:?}",
                s
            )));
        }
        let (c4, h, w) = (s[0], s[1], s[2]);
        let value = idwt2_stacked_raw(&self.nodes[x.0].value, c4, h, w);
        Ok(self.push(Op::Idwt2d { x }, vec![c4 / 4, 2 * h, 2 * w], value))
    }

    /// Sums the four band blocks of a `[4C, h, w]` stack into `[C, h, w]`.
    pub fn band_sum4(&mut self, x: Var) -> Result<Var> {
        let s = &self.nodes[x.0].shape;
        if s.len() != 3 || s[0] % 4 != 0 {
            return Err(SdError::InvalidArgument(format!(
                "band_sum4 expects [4C,h,w], got {:?}",
                s
            )));
        }
        let (c4, h, w) = (s[0], s[1], s[2]);
        let block = (c4 / 4) * h * w;
        let xv = &self.nodes[x.0].value;
        let mut value = vec![0.0; block];
        for b in 0..4 {
            for i in 0..block {
                value[i] += xv[b * block + i];
            }
        }
        Ok(self.push(Op::BandSum4 { x }, vec![c4 / 4, h, w], value))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x.0].value.len() {
            return Err(SdError::ShapeMismatch {
                op: "reshape",
                left: self.nodes[x.0].shape.clone(),
                right: shape.to_vec(),
            });
        }
        let value = self.nodes[x.0].value.clone();
        Ok(self.push(Op::Reshape { x }, shape.to_vec(), value))
    }

    /// Selects one row of a `[V, E]` table (embedding lookup).
    pub fn embed_row(&mut self, table: Var, row: usize) -> Result<Var> {
        let s = &self.nodes[table.0].shape;
        if s.len() != 2 || row >= s[0] {
            return Err(SdError::InvalidArgument(format!(
                "embed_row: row {row} out of bounds for table {:?}",
                s
            )));
        }
        let e = s[1];
        let value = self.nodes[table.0].value[row * e..(row + 1) * e].to_vec();
        Ok(self.push(Op::EmbedRow { table, row }, vec![e], value))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = vec![self.nodes[x.0].value.iter().sum()];
        self.push(Op::Sum { x }, vec![1], value)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.len() as f64;
        let value = vec![self.nodes[x.0].value.iter().sum::<f64>() / n];
        self.push(Op::Mean { x }, vec![1], value)
    }

    /// Mean squared error between two same-shape nodes, as one scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Frequency-weighted spectral energy of a `[C,H,W]` node:
    /// `mean_{c,u,v} w(u,v) * |DFT2(x_c)(u,v)|^2`, with `weights` laid out as
    /// an `H*W` grid (DC at (0,0)).
    pub fn spectral_sq_norm(&mut self, x: Var, weights: Arc<Vec<f64>>) -> Result<Var> {
        let s = &self.nodes[x.0].shape;
        if s.len() != 3 || weights.len() != s[1] * s[2] {
            return Err(SdError::InvalidArgument(format!(
                "spectral_sq_norm: input {:?} vs {} weights",
                s,
                weights.len()
            )));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let xv = &self.nodes[x.0].value;
        let mut acc = 0.0;
        for ch in 0..c {
            let spec = dft2_raw(&xv[ch * h * w..(ch + 1) * h * w], h, w);
            for (coef, &wt) in spec.iter().zip(weights.iter()) {
                acc += wt * coef.norm_sqr();
            }
        }
        let value = vec![acc / (c * h * w) as f64];
        Ok(self.push(Op::SpectralSqNorm { x, weights }, vec![1], value))
    }

    /// Reverse pass from a scalar loss. Computes one fresh gradient pass and
    /// adds it into each touched node's accumulated `grad`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(SdError::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut pass: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        pass[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = pass[id].take() else { continue };
            self.propagate(id, &g, &mut pass);
            let node = &mut self.nodes[id];
            // Constants never need their gradient kept around.
            if let Op::Leaf {
                requires_grad: false,
            } = node.op
            {
                continue;
            }
            match node.grad {
                Some(ref mut acc) => {
                    for (a, gi) in acc.iter_mut().zip(&g) {
                        *a += *gi;
                    }
                }
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn seed(pass: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
        pass[v.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn propagate(&self, id: usize, g: &[f64], pass: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Add { a, b } => {
                let tail = node.value.len() / self.nodes[b.0].value.len();
                {
                    let ga = Self::seed(pass, *a, self.nodes[a.0].value.len());
                    for (o, gi) in ga.iter_mut().zip(g) {
                        *o += *gi;
                    }
                }
                let gb = Self::seed(pass, *b, self.nodes[b.0].value.len());
                for (i, gi) in g.iter().enumerate() {
                    gb[i / tail] += *gi;
                }
            }
            Op::Sub { a, b } => {
                let tail = node.value.len() / self.nodes[b.0].value.len();
                {
                    let ga = Self::seed(pass, *a, self.nodes[a.0].value.len());
                    for (o, gi) in ga.iter_mut().zip(g) {
                        *o += *gi;
                    }
                }
                let gb = Self::seed(pass, *b, self.nodes[b.0].value.len());
                for (i, gi) in g.iter().enumerate() {
                    gb[i / tail] -= *gi;
                }
            }
            Op::Mul { a, b } => {
                let tail = node.value.len() / self.nodes[b.0].value.len();
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                {
                    let ga = Self::seed(pass, *a, av.len());
                    for (i, gi) in g.iter().enumerate() {
                        ga[i] += *gi * bv[i / tail];
                    }
                }
                let gb = Self::seed(pass, *b, bv.len());
                for (i, gi) in g.iter().enumerate() {
                    gb[i / tail] += *gi * av[i];
                }
            }
            Op::Scale { a, factor } => {
                let ga = Self::seed(pass, *a, self.nodes[a.0].value.len());
                for (o, gi) in ga.iter_mut().zip(g) {
                    *o += *gi * factor;
                }
            }
            Op::Sigmoid { a } => {
                let ga = Self::seed(pass, *a, self.nodes[a.0].value.len());
                for ((o, gi), s) in ga.iter_mut().zip(g).zip(&node.value) {
                    *o += *gi * s * (1.0 - s);
                }
            }
            Op::Silu { a } => {
                let av = &self.nodes[a.0].value;
                let ga = Self::seed(pass, *a, av.len());
                for ((o, gi), &x) in ga.iter_mut().zip(g).zip(av) {
                    let s = sigmoid(x);
                    *o += *gi * (s + x * s * (1.0 - s));
                }
            }
            Op::Relu { a } => {
                let av = &self.nodes[a.0].value;
                let ga = Self::seed(pass, *a, av.len());
                for ((o, gi), &x) in ga.iter_mut().zip(g).zip(av) {
                    if x > 0.0 {
                        *o += *gi;
                    }
                }
            }
            Op::Matmul { a, b } => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                let da = mm_nt(g, &self.nodes[b.0].value, m, n, k);
                let db = mm_tn(&self.nodes[a.0].value, g, m, k, n);
                {
                    let ga = Self::seed(pass, *a, m * k);
                    for (o, v) in ga.iter_mut().zip(&da) {
                        *o += *v;
                    }
                }
                let gb = Self::seed(pass, *b, k * n);
                for (o, v) in gb.iter_mut().zip(&db) {
                    *o += *v;
                }
            }
            Op::Linear { x, w, b } => {
                let (m, k) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                let n = self.nodes[w.0].shape[1];
                let dx = mm_nt(g, &self.nodes[w.0].value, m, n, k);
                let dw = mm_tn(&self.nodes[x.0].value, g, m, k, n);
                {
                    let gx = Self::seed(pass, *x, m * k);
                    for (o, v) in gx.iter_mut().zip(&dx) {
                        *o += *v;
                    }
                }
                {
                    let gw = Self::seed(pass, *w, k * n);
                    for (o, v) in gw.iter_mut().zip(&dw) {
                        *o += *v;
                    }
                }
                let gb = Self::seed(pass, *b, n);
                for row in g.chunks(n) {
                    for (o, gi) in gb.iter_mut().zip(row) {
                        *o += *gi;
                    }
                }
            }
            Op::ConcatCols { a, b } => {
                let (m, ka) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let kb = self.nodes[b.0].shape[1];
                {
                    let ga = Self::seed(pass, *a, m * ka);
                    for i in 0..m {
                        for j in 0..ka {
                            ga[i * ka + j] += g[i * (ka + kb) + j];
                        }
                    }
                }
                let gb = Self::seed(pass, *b, m * kb);
                for i in 0..m {
                    for j in 0..kb {
                        gb[i * kb + j] += g[i * (ka + kb) + ka + j];
                    }
                }
            }
            Op::Conv2d { x, w, stride, pad } => {
                let sx = &self.nodes[x.0].shape;
                let sw = &self.nodes[w.0].shape;
                let (c, h, wd) = (sx[0], sx[1], sx[2]);
                let (o, kh, kw) = (sw[0], sw[2], sw[3]);
                let (ho, wo) = (node.shape[1], node.shape[2]);
                let xv = &self.nodes[x.0].value;
                let wv = &self.nodes[w.0].value;
                let mut dx = vec![0.0; c * h * wd];
                let mut dw = vec![0.0; o * c * kh * kw];
                for oc in 0..o {
                    for i in 0..ho {
                        for j in 0..wo {
                            let gi = g[oc * ho * wo + i * wo + j];
                            if gi == 0.0 {
                                continue;
                            }
                            for ic in 0..c {
                                for p in 0..kh {
                                    let ii = (i * stride + p) as isize - *pad as isize;
                                    if ii < 0 || ii >= h as isize {
                                        continue;
                                    }
                                    for q in 0..kw {
                                        let jj = (j * stride + q) as isize - *pad as isize;
                                        if jj < 0 || jj >= wd as isize {
                                            continue;
                                        }
                                        let xi = ic * h * wd + ii as usize * wd + jj as usize;
                                        let wi = ((oc * c + ic) * kh + p) * kw + q;
                                        dx[xi] += gi * wv[wi];
                                        dw[wi] += gi * xv[xi];
                                    }
                                }
                            }
                        }
                    }
                }
                {
                    let gx = Self::seed(pass, *x, dx.len());
                    for (oacc, v) in gx.iter_mut().zip(&dx) {
                        *oacc += *v;
                    }
                }
                let gw = Self::seed(pass, *w, dw.len());
                for (oacc, v) in gw.iter_mut().zip(&dw) {
                    *oacc += *v;
                }
            }
            Op::AvgPoolGlobal { x } => {
                let s = &self.nodes[x.0].shape;
                let plane = s[1] * s[2];
                let gx = Self::seed(pass, *x, s[0] * plane);
                for (ch, gi) in g.iter().enumerate() {
                    let share = gi / plane as f64;
                    for v in gx[ch * plane..(ch + 1) * plane].iter_mut() {
                        *v += share;
                    }
                }
            }
            Op::Upsample2x { x } => {
                let s = &self.nodes[x.0].shape;
                let (c, h, w) = (s[0], s[1], s[2]);
                let gx = Self::seed(pass, *x, c * h * w);
                for ch in 0..c {
                    let base = ch * 4 * h * w;
                    for i in 0..h {
                        for j in 0..w {
                            gx[ch * h * w + i * w + j] += g[base + (2 * i) * 2 * w + 2 * j]
                                + g[base + (2 * i) * 2 * w + 2 * j + 1]
                                + g[base + (2 * i + 1) * 2 * w + 2 * j]
                                + g[base + (2 * i + 1) * 2 * w + 2 * j + 1];
                        }
                    }
                }
            }
            Op::Dwt2d { x } => {
                // Orthonormal: adjoint = inverse.
                let (c4, h2, w2) = (node.shape[0], node.shape[1], node.shape[2]);
                let dx = idwt2_stacked_raw(g, c4, h2, w2);
                let gx = Self::seed(pass, *x, dx.len());
                for (o, v) in gx.iter_mut().zip(&dx) {
                    *o += *v;
                }
            }
            Op::Idwt2d { x } => {
                let (c, h, w) = (node.shape[0], node.shape[1], node.shape[2]);
                let dx = dwt2_stacked_raw(g, c, h, w);
                let gx = Self::seed(pass, *x, dx.len());
                for (o, v) in gx.iter_mut().zip(&dx) {
                    *o += *v;
                }
            }
            Op::BandSum4 { x } => {
                let block = node.value.len();
                let gx = Self::seed(pass, *x, 4 * block);
                for b in 0..4 {
                    for (i, gi) in g.iter().enumerate() {
                        gx[b * block + i] += *gi;
                    }
                }
            }
            Op::Reshape { x } => {
                let gx = Self::seed(pass, *x, self.nodes[x.0].value.len());
                for (o, gi) in gx.iter_mut().zip(g) {
                    *o += *gi;
                }
            }
            Op::EmbedRow { table, row } => {
                let e = node.value.len();
                let gt = Self::seed(pass, *table, self.nodes[table.0].value.len());
                for (j, gi) in g.iter().enumerate() {
                    gt[row * e + j] += *gi;
                }
            }
            Op::Sum { x } => {
                let gx = Self::seed(pass, *x, self.nodes[x.0].value.len());
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }
            Op::Mean { x } => {
                let n = self.nodes[x.0].value.len();
                let share = g[0] / n as f64;
                let gx = Self::seed(pass, *x, n);
                for o in gx.iter_mut() {
                    *o += share;
                }
            }
            Op::SpectralSqNorm { x, weights } => {
                // d/dx mean_c sum_uv w |F_c|^2 / (H*W)
                //   = (2 / C) * Re(IDFT2[w .* F_c]) per channel
                // (the unnormalized-forward adjoint is H*W times the inverse,
                // which cancels the H*W in the elementwise mean).
                let s = &self.nodes[x.0].shape;
                let (c, h, w) = (s[0], s[1], s[2]);
                let xv = &self.nodes[x.0].value;
                let scale = 2.0 / c as f64 * g[0];
                let gx = Self::seed(pass, *x, c * h * w);
                for ch in 0..c {
                    let mut spec = dft2_raw(&xv[ch * h * w..(ch + 1) * h * w], h, w);
                    for (coef, &wt) in spec.iter_mut().zip(weights.iter()) {
                        *coef *= Complex64::new(wt, 0.0);
                    }
                    let back = idft2_raw(&spec, h, w);
                    for (o, v) in gx[ch * h * w..(ch + 1) * h * w].iter_mut().zip(&back) {
                        *o += scale * v.re;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn randvec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()
    }

    #[test]
    fn elementwise_values() {
        let mut g = Graph::new();
        let z = g.constant(&[1], vec![0.0]);
        let s = g.sigmoid(z);
        assert_eq!(g.value(s), &[0.5]);

        let a = g.constant(&[2], vec![1.0, 2.0]);
        let b = g.constant(&[2], vec![3.0, 4.0]);
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c), &[4.0, 6.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(&[2, 3], vec![0.0; 6]);
        let b = g.constant(&[3], vec![0.0; 3]);
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn mul_gradient_matches_product_rule() {
        let mut g = Graph::new();
        let ta = Tensor::new(vec![1], vec![3.0]).unwrap().with_grad();
        let tb = Tensor::new(vec![1], vec![4.0]).unwrap().with_grad();
        let a = g.leaf(&ta);
        let b = g.leaf(&tb);
        let p = g.mul(a, b).unwrap();
        let loss = g.sum(p);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[4.0]);
        assert_eq!(g.grad(b).unwrap(), &[3.0]);

        // And against central differences.
        let fd = check::numeric_gradient(
            &mut |v: &[f64]| v[0] * v[1],
            &[3.0, 4.0],
            1e-6,
        );
        assert!(check::max_rel_err(&[4.0, 3.0], &fd) < 1e-4);
    }

    #[test]
    fn matmul_small_examples() {
        let mut g = Graph::new();
        let eye = g.constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let x = g.constant(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]);
        let y = g.matmul(eye, x).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let a = g.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let ones = g.constant(&[2, 1], vec![1.0, 1.0]);
        let z = g.matmul(a, ones).unwrap();
        assert_eq!(g.value(z), &[3.0, 7.0]);

        let bad = g.matmul(z, a); // [2,1] x [2,2]: inner dims disagree
        assert!(matches!(bad, Err(SdError::ShapeMismatch { .. })));
    }

    #[test]
    fn avgpool_values() {
        let mut g = Graph::new();
        let x = g.constant(&[1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]);
        let p = g.avgpool_global(x).unwrap();
        assert_eq!(g.value(p), &[4.0]);

        let c = g.constant(&[2, 3, 3], vec![2.5; 18]);
        let pc = g.avgpool_global(c).unwrap();
        assert_eq!(g.value(pc), &[2.5, 2.5]);
    }

    #[test]
    fn conv_identity_and_constant_sums() {
        let mut g = Graph::new();
        let x = g.constant(&[1, 3, 3], (1..=9).map(|v| v as f64).collect());
        let w1 = g.constant(&[1, 1, 1, 1], vec![1.0]);
        let y = g.conv2d(x, w1, 1, 0).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let c = g.constant(&[1, 4, 4], vec![2.0; 16]);
        let w9 = g.constant(&[1, 1, 3, 3], vec![1.0; 9]);
        let s = g.conv2d(c, w9, 1, 1).unwrap();
        // Same-pad interior of an all-ones 3x3 kernel on a constant image.
        assert_eq!(g.value(s)[5], 18.0);
        assert_eq!(g.value(s)[6], 18.0);
        // Corner only overlaps 4 cells.
        assert_eq!(g.value(s)[0], 8.0);
    }

    #[test]
    fn strided_conv_shape() {
        let mut g = Graph::new();
        let x = g.constant(&[1, 8, 8], vec![1.0; 64]);
        let w = g.constant(&[2, 1, 3, 3], vec![0.1; 18]);
        let y = g.conv2d(x, w, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[2, 4, 4]);
    }

    #[test]
    fn backward_of_sum_and_half_norm() {
        let mut g = Graph::new();
        let t = Tensor::new(vec![2, 3], randvec(6, 1)).unwrap().with_grad();
        let x = g.leaf(&t);
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);

        let mut g2 = Graph::new();
        let x2 = g2.leaf(&t);
        let sq = g2.mul(x2, x2).unwrap();
        let total = g2.sum(sq);
        let half = g2.scale(total, 0.5);
        g2.backward(half).unwrap();
        for (gv, xv) in g2.grad(x2).unwrap().iter().zip(t.data()) {
            assert!((gv - xv).abs() < 1e-12);
        }
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().with_grad();
        let x = g.leaf(&t);
        let s = g.sum(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0; 3]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.constant(&[2], vec![1.0, 2.0]);
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let data = randvec(4, 3);
        let t = Tensor::new(vec![4], data).unwrap().with_grad();

        let grad_of = |build: &dyn Fn(&mut Graph, Var) -> Var| -> Vec<f64> {
            let mut g = Graph::new();
            let x = g.leaf(&t);
            let loss = build(&mut g, x);
            g.backward(loss).unwrap();
            g.grad(x).unwrap().to_vec()
        };

        // f = sum(x^2), h = sum(silu(x))
        let f = |g: &mut Graph, x: Var| {
            let sq = g.mul(x, x).unwrap();
            g.sum(sq)
        };
        let h = |g: &mut Graph, x: Var| {
            let s = g.silu(x);
            g.sum(s)
        };
        let gf = grad_of(&f);
        let gh = grad_of(&h);
        let (ca, cb) = (2.5, -1.25);
        let combined = grad_of(&|g: &mut Graph, x: Var| {
            let lf = f(g, x);
            let lh = h(g, x);
            let sf = g.scale(lf, ca);
            let sh = g.scale(lh, cb);
            g.add(sf, sh).unwrap()
        });
        for i in 0..4 {
            let expect = ca * gf[i] + cb * gh[i];
            assert!((combined[i] - expect).abs() < 1e-12);
        }
    }

    /// Central-difference check of one op under a sum loss.
    fn op_gradient_check<F>(shape: &[usize], seed: u64, build: F)
    where
        F: Fn(&mut Graph, Var) -> Var,
    {
        let data = randvec(shape.iter().product(), seed);
        let t = Tensor::new(shape.to_vec(), data.clone()).unwrap().with_grad();
        let mut g = Graph::new();
        let x = g.leaf(&t);
        let y = build(&mut g, x);
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        let analytic = g.grad(x).unwrap().to_vec();

        let fd = check::numeric_gradient(
            &mut |v: &[f64]| {
                let tt = Tensor::new(shape.to_vec(), v.to_vec()).unwrap();
                let mut gg = Graph::new();
                let xx = gg.leaf(&tt);
                let yy = build(&mut gg, xx);
                let ll = gg.sum(yy);
                gg.scalar_value(ll)
            },
            &data,
            1e-6,
        );
        let err = check::max_rel_err(&analytic, &fd);
        assert!(err < 1e-4, "gradient mismatch {err}");
    }

    #[test]
    fn unary_op_gradients_match_finite_differences() {
        op_gradient_check(&[5], 10, |g, x| g.sigmoid(x));
        op_gradient_check(&[5], 11, |g, x| g.silu(x));
        op_gradient_check(&[5], 12, |g, x| {
            // keep relu inputs away from the kink
            let shifted = g.scale(x, 1.0);
            g.relu(shifted)
        });
        op_gradient_check(&[6], 13, |g, x| g.mean(x));
        op_gradient_check(&[1, 4, 4], 14, |g, x| g.dwt2d(x).unwrap());
        op_gradient_check(&[4, 2, 2], 15, |g, x| g.idwt2d(x).unwrap());
        op_gradient_check(&[4, 2, 2], 16, |g, x| g.band_sum4(x).unwrap());
        op_gradient_check(&[1, 3, 3], 17, |g, x| g.avgpool_global(x).unwrap());
        op_gradient_check(&[2, 2, 2], 18, |g, x| g.upsample2x(x).unwrap());
        op_gradient_check(&[6], 19, |g, x| g.reshape(x, &[2, 3]).unwrap());
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        // random 4x3 * 3x2, perturbing both operands
        let a0 = randvec(12, 20);
        let b0 = randvec(6, 21);
        let mut flat = a0.clone();
        flat.extend_from_slice(&b0);

        let eval = |v: &[f64]| {
            let ta = Tensor::new(vec![4, 3], v[..12].to_vec()).unwrap();
            let tb = Tensor::new(vec![3, 2], v[12..].to_vec()).unwrap();
            let mut g = Graph::new();
            let a = g.leaf(&ta);
            let b = g.leaf(&tb);
            let y = g.matmul(a, b).unwrap();
            let l = g.sum(y);
            g.scalar_value(l)
        };
        let fd = check::numeric_gradient(&mut |v: &[f64]| eval(v), &flat, 1e-6);

        let ta = Tensor::new(vec![4, 3], a0).unwrap().with_grad();
        let tb = Tensor::new(vec![3, 2], b0).unwrap().with_grad();
        let mut g = Graph::new();
        let a = g.leaf(&ta);
        let b = g.leaf(&tb);
        let y = g.matmul(a, b).unwrap();
        let l = g.sum(y);
        g.backward(l).unwrap();
        let mut analytic = g.grad(a).unwrap().to_vec();
        analytic.extend_from_slice(g.grad(b).unwrap());
        assert!(check::max_rel_err(&analytic, &fd) < 1e-4);
    }

    #[test]
    fn conv_gradient_matches_finite_differences() {
        // 1x4x4 input, 2 output channels, 3x3 same-pad
        let x0 = randvec(16, 30);
        let w0 = randvec(18, 31);
        let mut flat = x0.clone();
        flat.extend_from_slice(&w0);
        let eval = |v: &[f64]| {
            let tx = Tensor::new(vec![1, 4, 4], v[..16].to_vec()).unwrap();
            let tw = Tensor::new(vec![2, 1, 3, 3], v[16..].to_vec()).unwrap();
            let mut g = Graph::new();
            let x = g.leaf(&tx);
            let w = g.leaf(&tw);
            let y = g.conv2d(x, w, 1, 1).unwrap();
            let l = g.sum(y);
            g.scalar_value(l)
        };
        let fd = check::numeric_gradient(&mut |v: &[f64]| eval(v), &flat, 1e-6);

        let tx = Tensor::new(vec![1, 4, 4], x0).unwrap().with_grad();
        let tw = Tensor::new(vec![2, 1, 3, 3], w0).unwrap().with_grad();
        let mut g = Graph::new();
        let x = g.leaf(&tx);
        let w = g.leaf(&tw);
        let y = g.conv2d(x, w, 1, 1).unwrap();
        let l = g.sum(y);
        g.backward(l).unwrap();
        let mut analytic = g.grad(x).unwrap().to_vec();
        analytic.extend_from_slice(g.grad(w).unwrap());
        assert!(check::max_rel_err(&analytic, &fd) < 1e-4);
    }

    #[test]
    fn broadcast_add_and_mul_gradients() {
        // [2,2,2] against [2,1,1]
        let a0 = randvec(8, 40);
        let b0 = randvec(2, 41);
        let mut flat = a0.clone();
        flat.extend_from_slice(&b0);
        let eval = |v: &[f64]| {
            let ta = Tensor::new(vec![2, 2, 2], v[..8].to_vec()).unwrap();
            let tb = Tensor::new(vec![2, 1, 1], v[8..].to_vec()).unwrap();
            let mut g = Graph::new();
            let a = g.leaf(&ta);
            let b = g.leaf(&tb);
            let m = g.mul(a, b).unwrap();
            let s = g.add(m, b).unwrap();
            let l = g.sum(s);
            g.scalar_value(l)
        };
        let fd = check::numeric_gradient(&mut |v: &[f64]| eval(v), &flat, 1e-6);

        let ta = Tensor::new(vec![2, 2, 2], a0).unwrap().with_grad();
        let tb = Tensor::new(vec![2, 1, 1], b0).unwrap().with_grad();
        let mut g = Graph::new();
        let a = g.leaf(&ta);
        let b = g.leaf(&tb);
        let m = g.mul(a, b).unwrap();
        let s = g.add(m, b).unwrap();
        let l = g.sum(s);
        g.backward(l).unwrap();
        let mut analytic = g.grad(a).unwrap().to_vec();
        analytic.extend_from_slice(g.grad(b).unwrap());
        assert!(check::max_rel_err(&analytic, &fd) < 1e-4);
    }

    #[test]
    fn linear_concat_and_embed_gradients() {
        let x0 = randvec(6, 50); // [2,3]
        let w0 = randvec(6, 51); // [3,2]
        let b0 = randvec(2, 52);
        let e0 = randvec(8, 53); // table [4,2]
        let mut flat = x0.clone();
        flat.extend_from_slice(&w0);
        flat.extend_from_slice(&b0);
        flat.extend_from_slice(&e0);
        let eval = |v: &[f64]| {
            let tx = Tensor::new(vec![2, 3], v[..6].to_vec()).unwrap();
            let tw = Tensor::new(vec![3, 2], v[6..12].to_vec()).unwrap();
            let tb = Tensor::new(vec![2], v[12..14].to_vec()).unwrap();
            let te = Tensor::new(vec![4, 2], v[14..].to_vec()).unwrap();
            let mut g = Graph::new();
            let x = g.leaf(&tx);
            let w = g.leaf(&tw);
            let b = g.leaf(&tb);
            let e = g.leaf(&te);
            let y = g.linear(x, w, b).unwrap();
            let row = g.embed_row(e, 2).unwrap();
            let rowm = g.reshape(row, &[1, 2]).unwrap();
            let row2 = g.constant(&[1, 2], vec![0.5, -0.5]);
            let stacked = g.concat_cols(rowm, row2).unwrap();
            let ysum = g.sum(y);
            let ssum = g.sum(stacked);
            let l = g.add(ysum, ssum).unwrap();
            g.scalar_value(l)
        };
        let fd = check::numeric_gradient(&mut |v: &[f64]| eval(v), &flat, 1e-6);

        let tx = Tensor::new(vec![2, 3], x0).unwrap().with_grad();
        let tw = Tensor::new(vec![3, 2], w0).unwrap().with_grad();
        let tb = Tensor::new(vec![2], b0).unwrap().with_grad();
        let te = Tensor::new(vec![4, 2], e0).unwrap().with_grad();
        let mut g = Graph::new();
        let x = g.leaf(&tx);
        let w = g.leaf(&tw);
        let b = g.leaf(&tb);
        let e = g.leaf(&te);
        let y = g.linear(x, w, b).unwrap();
        let row = g.embed_row(e, 2).unwrap();
        let rowm = g.reshape(row, &[1, 2]).unwrap();
        let row2 = g.constant(&[1, 2], vec![0.5, -0.5]);
        let stacked = g.concat_cols(rowm, row2).unwrap();
        let ysum = g.sum(y);
        let ssum = g.sum(stacked);
        let l = g.add(ysum, ssum).unwrap();
        g.backward(l).unwrap();
        let mut analytic = g.grad(x).unwrap().to_vec();
        analytic.extend_from_slice(g.grad(w).unwrap());
        analytic.extend_from_slice(g.grad(b).unwrap());
        analytic.extend_from_slice(g.grad(e).unwrap());
        assert!(check::max_rel_err(&analytic, &fd) < 1e-4);
    }

    #[test]
    fn spectral_sq_norm_gradient_matches_finite_differences() {
        let x0 = randvec(16, 60); // [1,4,4]
        let weights: Arc<Vec<f64>> =
            Arc::new((0..16).map(|i| 0.1 + (i % 5) as f64 * 0.3).collect());
        let eval = |v: &[f64]| {
            let tx = Tensor::new(vec![1, 4, 4], v.to_vec()).unwrap();
            let mut g = Graph::new();
            let x = g.leaf(&tx);
            let l = g.spectral_sq_norm(x, weights.clone()).unwrap();
            g.scalar_value(l)
        };
        let fd = check::numeric_gradient(&mut |v: &[f64]| eval(v), &x0, 1e-6);

        let tx = Tensor::new(vec![1, 4, 4], x0).unwrap().with_grad();
        let mut g = Graph::new();
        let x = g.leaf(&tx);
        let l = g.spectral_sq_norm(x, weights.clone()).unwrap();
        g.backward(l).unwrap();
        assert!(check::max_rel_err(g.grad(x).unwrap(), &fd) < 1e-4);
    }

    #[test]
    fn dwt_idwt_round_trip_through_graph() {
        let mut g = Graph::new();
        let x = g.constant(&[2, 4, 4], randvec(32, 70));
        let bands = g.dwt2d(x).unwrap();
        let back = g.idwt2d(bands).unwrap();
        for (a, b) in g.value(x).iter().zip(g.value(back)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
