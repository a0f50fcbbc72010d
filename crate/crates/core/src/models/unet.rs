//! Small time-conditioned UNet whose resampling is wavelet gating.
//!
//! Encoder levels run a residual conv block and a WG-Down (or a stride-2
//! conv in the plain baseline); the decoder mirrors them with WG-Up (or
//! nearest-neighbour upsampling plus a conv). Skip connections are additive
//! at equal resolution, the step embedding (plus an optional class
//! embedding) is injected into every residual block through a learned
//! per-block projection, and the final conv starts at zero so the untrained
//! model predicts zero noise.

use crate::diffusion::Denoiser;
use crate::error::{Result, SdError};
use crate::graph::{Graph, Var};
use crate::models::embed::sinusoidal_embedding;
use crate::models::gating::{wg_down, wg_up, GateBinds, GateFfn};
use crate::tensor::Tensor;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnetConfig {
    pub in_channels: usize,
    /// Square input size; must be divisible by 2^(levels).
    pub image_hw: usize,
    /// Channel width per level; the last entry is the bottleneck width.
    pub widths: Vec<usize>,
    pub temb_dim: usize,
    /// Class-conditional when set; one extra null row backs CFG dropout.
    pub n_classes: Option<usize>,
    /// Stride-2 / nearest-neighbour resampling instead of wavelet gating.
    #[serde(default)]
    pub plain_resample: bool,
}

impl UnetConfig {
    pub fn levels(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(SdError::InvalidArgument(
                "unet needs at least two widths (one level)".to_string(),
            ));
        }
        if self.temb_dim < 2 || self.temb_dim % 2 != 0 {
            return Err(SdError::InvalidArgument(
                "temb_dim must be even and >= 2".to_string(),
            ));
        }
        if self.image_hw % (1 << self.levels()) != 0 {
            return Err(SdError::InvalidArgument(format!(
                "image size {} not divisible by 2^{}",
                self.image_hw,
                self.levels()
            )));
        }
        Ok(())
    }

    /// Null-condition id (the extra embedding row).
    pub fn uncond_token(&self) -> Option<usize> {
        self.n_classes
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1_w: Tensor,
    conv1_b: Tensor,
    tproj_w: Tensor,
    tproj_b: Tensor,
    conv2_w: Tensor,
    conv2_b: Tensor,
}

impl ResBlock {
    fn new<R: Rng>(c: usize, temb_dim: usize, rng: &mut R) -> Self {
        let conv_std = (1.0 / (c * 9) as f64).sqrt();
        let proj_std = (1.0 / temb_dim as f64).sqrt();
        ResBlock {
            conv1_w: Tensor::randn_scaled(&[c, c, 3, 3], conv_std, rng).with_grad(),
            conv1_b: Tensor::zeros(&[c]).with_grad(),
            tproj_w: Tensor::randn_scaled(&[temb_dim, c], proj_std, rng).with_grad(),
            tproj_b: Tensor::zeros(&[c]).with_grad(),
            conv2_w: Tensor::randn_scaled(&[c, c, 3, 3], conv_std, rng).with_grad(),
            conv2_b: Tensor::zeros(&[c]).with_grad(),
        }
    }
}

#[derive(Clone, Debug)]
struct DownStage {
    gate: Option<GateFfn>,
    pool_w: Option<Tensor>,
    pool_b: Option<Tensor>,
    chan_w: Tensor,
    chan_b: Tensor,
}

#[derive(Clone, Debug)]
struct UpStage {
    expand_w: Tensor,
    expand_b: Tensor,
    gate: Option<GateFfn>,
}

#[derive(Clone, Debug)]
pub struct WgUnet {
    cfg: UnetConfig,
    stem_w: Tensor,
    stem_b: Tensor,
    enc: Vec<ResBlock>,
    down: Vec<DownStage>,
    mid: ResBlock,
    up: Vec<UpStage>,
    dec: Vec<ResBlock>,
    head_w: Tensor,
    head_b: Tensor,
    class_embed: Option<Tensor>,
}

struct ResBinds {
    c1w: Var,
    c1b: Var,
    tw: Var,
    tb: Var,
    c2w: Var,
    c2b: Var,
}

struct DownBinds {
    gate: Option<GateBinds>,
    pool: Option<(Var, Var)>,
    chan: (Var, Var),
}

struct UpBinds {
    expand: (Var, Var),
    gate: Option<GateBinds>,
}

pub struct UnetBinds {
    stem: (Var, Var),
    enc: Vec<ResBinds>,
    down: Vec<DownBinds>,
    mid: ResBinds,
    up: Vec<UpBinds>,
    dec: Vec<ResBinds>,
    head: (Var, Var),
    class_embed: Option<Var>,
}

/// Intermediate activations and gate values recorded during a forward pass.
#[derive(Default)]
pub struct Taps {
    /// Post-resampler activations plus the final prediction, labelled
    /// "down{l}", "up{l}", "out".
    pub features: Vec<(String, Var)>,
    /// Flat `[4C]` gate vectors per resampler layer.
    pub gates: Vec<(String, Var)>,
}

impl WgUnet {
    pub fn new<R: Rng>(cfg: UnetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let l = cfg.levels();
        let stem_std = (1.0 / (cfg.in_channels * 9) as f64).sqrt();
        let stem_w =
            Tensor::randn_scaled(&[cfg.widths[0], cfg.in_channels, 3, 3], stem_std, rng)
                .with_grad();
        let stem_b = Tensor::zeros(&[cfg.widths[0]]).with_grad();

        let mut enc = Vec::with_capacity(l);
        for lvl in 0..l {
            enc.push(ResBlock::new(cfg.widths[lvl], cfg.temb_dim, rng));
        }

        let mut down = Vec::with_capacity(l);
        for lvl in 0..l {
            let c = cfg.widths[lvl];
            let c_next = cfg.widths[lvl + 1];
            let (gate, pool_w, pool_b) = if cfg.plain_resample {
                let std = (1.0 / (c * 9) as f64).sqrt();
                (
                    None,
                    Some(Tensor::randn_scaled(&[c, c, 3, 3], std, rng).with_grad()),
                    Some(Tensor::zeros(&[c]).with_grad()),
                )
            } else {
                (Some(GateFfn::new(c, c, rng)), None, None)
            };
            let std = (1.0 / (c * 9) as f64).sqrt();
            down.push(DownStage {
                gate,
                pool_w,
                pool_b,
                chan_w: Tensor::randn_scaled(&[c_next, c, 3, 3], std, rng).with_grad(),
                chan_b: Tensor::zeros(&[c_next]).with_grad(),
            });
        }

        let mid = ResBlock::new(cfg.widths[l], cfg.temb_dim, rng);

        let mut up = Vec::with_capacity(l);
        for lvl in 0..l {
            let c = cfg.widths[lvl];
            let c_next = cfg.widths[lvl + 1];
            let out_c = if cfg.plain_resample { c } else { 4 * c };
            let std = (1.0 / (c_next * 9) as f64).sqrt();
            up.push(UpStage {
                expand_w: Tensor::randn_scaled(&[out_c, c_next, 3, 3], std, rng).with_grad(),
                expand_b: Tensor::zeros(&[out_c]).with_grad(),
                gate: if cfg.plain_resample {
                    None
                } else {
                    Some(GateFfn::new(4 * c, c, rng))
                },
            });
        }

        let mut dec = Vec::with_capacity(l);
        for lvl in 0..l {
            dec.push(ResBlock::new(cfg.widths[lvl], cfg.temb_dim, rng));
        }

        let head_w = Tensor::zeros(&[cfg.in_channels, cfg.widths[0], 3, 3]).with_grad();
        let head_b = Tensor::zeros(&[cfg.in_channels]).with_grad();

        let class_embed = cfg.n_classes.map(|n| {
            Tensor::randn_scaled(&[n + 1, cfg.temb_dim], 0.1, rng).with_grad()
        });

        Ok(WgUnet {
            cfg,
            stem_w,
            stem_b,
            enc,
            down,
            mid,
            up,
            dec,
            head_w,
            head_b,
            class_embed,
        })
    }

    pub fn config(&self) -> &UnetConfig {
        &self.cfg
    }

    fn walk<'a>(&'a self, mut f: impl FnMut(String, &'a Tensor)) {
        f("stem.w".into(), &self.stem_w);
        f("stem.b".into(), &self.stem_b);
        let res = |f: &mut dyn FnMut(String, &'a Tensor), p: String, rb: &'a ResBlock| {
            f(format!("{p}.conv1.w"), &rb.conv1_w);
            f(format!("{p}.conv1.b"), &rb.conv1_b);
            f(format!("{p}.tproj.w"), &rb.tproj_w);
            f(format!("{p}.tproj.b"), &rb.tproj_b);
            f(format!("{p}.conv2.w"), &rb.conv2_w);
            f(format!("{p}.conv2.b"), &rb.conv2_b);
        };
        for (l, rb) in self.enc.iter().enumerate() {
            res(&mut f, format!("enc{l}"), rb);
        }
        for (l, d) in self.down.iter().enumerate() {
            if let Some(gate) = &d.gate {
                f(format!("down{l}.gate.w1"), &gate.w1);
                f(format!("down{l}.gate.b1"), &gate.b1);
                f(format!("down{l}.gate.w2"), &gate.w2);
                f(format!("down{l}.gate.b2"), &gate.b2);
            }
            if let (Some(pw), Some(pb)) = (&d.pool_w, &d.pool_b) {
                f(format!("down{l}.pool.w"), pw);
                f(format!("down{l}.pool.b"), pb);
            }
            f(format!("down{l}.chan.w"), &d.chan_w);
            f(format!("down{l}.chan.b"), &d.chan_b);
        }
        res(&mut f, "mid".into(), &self.mid);
        for (l, u) in self.up.iter().enumerate() {
            f(format!("up{l}.expand.w"), &u.expand_w);
            f(format!("up{l}.expand.b"), &u.expand_b);
            if let Some(gate) = &u.gate {
                f(format!("up{l}.gate.w1"), &gate.w1);
                f(format!("up{l}.gate.b1"), &gate.b1);
                f(format!("up{l}.gate.w2"), &gate.w2);
                f(format!("up{l}.gate.b2"), &gate.b2);
            }
        }
        for (l, rb) in self.dec.iter().enumerate() {
            res(&mut f, format!("dec{l}"), rb);
        }
        f("head.w".into(), &self.head_w);
        f("head.b".into(), &self.head_b);
        if let Some(ce) = &self.class_embed {
            f("class_embed".into(), ce);
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.walk(|name, t| out.push((name, t)));
        out
    }

    /// Same order as [`WgUnet::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.push(&mut self.stem_w);
        out.push(&mut self.stem_b);
        fn res<'a>(out: &mut Vec<&'a mut Tensor>, rb: &'a mut ResBlock) {
            out.push(&mut rb.conv1_w);
            out.push(&mut rb.conv1_b);
            out.push(&mut rb.tproj_w);
            out.push(&mut rb.tproj_b);
            out.push(&mut rb.conv2_w);
            out.push(&mut rb.conv2_b);
        }
        for rb in self.enc.iter_mut() {
            res(&mut out, rb);
        }
        for d in self.down.iter_mut() {
            if let Some(gate) = &mut d.gate {
                out.push(&mut gate.w1);
                out.push(&mut gate.b1);
                out.push(&mut gate.w2);
                out.push(&mut gate.b2);
            }
            if let Some(pw) = &mut d.pool_w {
                out.push(pw);
            }
            if let Some(pb) = &mut d.pool_b {
                out.push(pb);
            }
            out.push(&mut d.chan_w);
            out.push(&mut d.chan_b);
        }
        res(&mut out, &mut self.mid);
        for u in self.up.iter_mut() {
            out.push(&mut u.expand_w);
            out.push(&mut u.expand_b);
            if let Some(gate) = &mut u.gate {
                out.push(&mut gate.w1);
                out.push(&mut gate.b1);
                out.push(&mut gate.w2);
                out.push(&mut gate.b2);
            }
        }
        for rb in self.dec.iter_mut() {
            res(&mut out, rb);
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        if let Some(ce) = &mut self.class_embed {
            out.push(ce);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Resampler-owned parameters: the gate heads, the stride-2 pooling
    /// convs, and the decoder expansion convs.
    pub fn is_resampler_param(name: &str) -> bool {
        name.contains(".gate.") || name.contains(".pool.") || name.contains(".expand.")
    }

    pub fn bind(&self, g: &mut Graph) -> UnetBinds {
        let res = |g: &mut Graph, rb: &ResBlock| ResBinds {
            c1w: g.leaf(&rb.conv1_w),
            c1b: g.leaf(&rb.conv1_b),
            tw: g.leaf(&rb.tproj_w),
            tb: g.leaf(&rb.tproj_b),
            c2w: g.leaf(&rb.conv2_w),
            c2b: g.leaf(&rb.conv2_b),
        };
        UnetBinds {
            stem: (g.leaf(&self.stem_w), g.leaf(&self.stem_b)),
            enc: self.enc.iter().map(|rb| res(g, rb)).collect(),
            down: self
                .down
                .iter()
                .map(|d| DownBinds {
                    gate: d.gate.as_ref().map(|gate| gate.bind(g)),
                    pool: d
                        .pool_w
                        .as_ref()
                        .map(|pw| (g.leaf(pw), g.leaf(d.pool_b.as_ref().unwrap()))),
                    chan: (g.leaf(&d.chan_w), g.leaf(&d.chan_b)),
                })
                .collect(),
            mid: res(g, &self.mid),
            up: self
                .up
                .iter()
                .map(|u| UpBinds {
                    expand: (g.leaf(&u.expand_w), g.leaf(&u.expand_b)),
                    gate: u.gate.as_ref().map(|gate| gate.bind(g)),
                })
                .collect(),
            dec: self.dec.iter().map(|rb| res(g, rb)).collect(),
            head: (g.leaf(&self.head_w), g.leaf(&self.head_b)),
            class_embed: self.class_embed.as_ref().map(|ce| g.leaf(ce)),
        }
    }

    pub fn flat_binds(binds: &UnetBinds) -> Vec<Var> {
        let mut out = Vec::new();
        out.push(binds.stem.0);
        out.push(binds.stem.1);
        let res = |out: &mut Vec<Var>, rb: &ResBinds| {
            out.extend([rb.c1w, rb.c1b, rb.tw, rb.tb, rb.c2w, rb.c2b]);
        };
        for rb in &binds.enc {
            res(&mut out, rb);
        }
        for d in &binds.down {
            if let Some(gb) = &d.gate {
                out.extend([gb.w1, gb.b1, gb.w2, gb.b2]);
            }
            if let Some((pw, pb)) = &d.pool {
                out.extend([*pw, *pb]);
            }
            out.extend([d.chan.0, d.chan.1]);
        }
        res(&mut out, &binds.mid);
        for u in &binds.up {
            out.extend([u.expand.0, u.expand.1]);
            if let Some(gb) = &u.gate {
                out.extend([gb.w1, gb.b1, gb.w2, gb.b2]);
            }
        }
        for rb in &binds.dec {
            res(&mut out, rb);
        }
        out.extend([binds.head.0, binds.head.1]);
        if let Some(ce) = binds.class_embed {
            out.push(ce);
        }
        out
    }

    pub fn pull_grads(&mut self, g: &Graph, binds: &UnetBinds) {
        let vars = Self::flat_binds(binds);
        for (p, v) in self.params_mut().into_iter().zip(vars) {
            g.pull_grad(v, p);
        }
    }

    fn conv_bias(g: &mut Graph, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let y = g.conv2d(x, w, stride, pad)?;
        let c = g.shape(y)[0];
        let bias = g.reshape(b, &[c, 1, 1])?;
        g.add(y, bias)
    }

    fn res_forward(
        &self,
        g: &mut Graph,
        rb: &ResBinds,
        h: Var,
        temb: Var,
    ) -> Result<Var> {
        let r = g.silu(h);
        let r = Self::conv_bias(g, r, rb.c1w, rb.c1b, 1, 1)?;
        let trow = g.reshape(temb, &[1, self.cfg.temb_dim])?;
        let tout = g.linear(trow, rb.tw, rb.tb)?;
        let c = g.shape(r)[0];
        let tcol = g.reshape(tout, &[c, 1, 1])?;
        let r = g.add(r, tcol)?;
        let r = g.silu(r);
        let r = Self::conv_bias(g, r, rb.c2w, rb.c2b, 1, 1)?;
        g.add(h, r)
    }

    fn temb_var(&self, g: &mut Graph, binds: &UnetBinds, t: usize, cond: Option<usize>) -> Result<Var> {
        let base = g.constant(
            &[self.cfg.temb_dim],
            sinusoidal_embedding(t, self.cfg.temb_dim),
        );
        match (binds.class_embed, self.cfg.n_classes) {
            (Some(table), Some(n)) => {
                let row = cond.unwrap_or(n); // null row when unconditioned
                if row > n {
                    return Err(SdError::InvalidArgument(format!(
                        "class id {row} out of range (n_classes = {n})"
                    )));
                }
                let ce = g.embed_row(table, row)?;
                g.add(base, ce)
            }
            _ => Ok(base),
        }
    }

    /// Forward pass for one `[C, H, W]` sample.
    pub fn forward_one(
        &self,
        g: &mut Graph,
        binds: &UnetBinds,
        x: Var,
        t: usize,
        cond: Option<usize>,
        mut taps: Option<&mut Taps>,
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let levels = self.cfg.levels();
        if shape.len() != 3
            || shape[0] != self.cfg.in_channels
            || shape[1] % (1 << levels) != 0
            || shape[2] % (1 << levels) != 0
        {
            return Err(SdError::InvalidArgument(format!(
                "unet input {:?} incompatible with {} levels and {} channels",
                shape, levels, self.cfg.in_channels
            )));
        }
        let temb = self.temb_var(g, binds, t, cond)?;
        let mut h = Self::conv_bias(g, x, binds.stem.0, binds.stem.1, 1, 1)?;
        let mut skips = Vec::with_capacity(levels);
        for lvl in 0..levels {
            h = self.res_forward(g, &binds.enc[lvl], h, temb)?;
            skips.push(h);
            let d = &binds.down[lvl];
            let resampled = if let Some(gb) = &d.gate {
                let out = wg_down(g, h, gb, None)?;
                if let Some(taps) = taps.as_deref_mut() {
                    taps.gates.push((format!("down{lvl}"), out.gates));
                }
                out.out
            } else {
                let (pw, pb) = d.pool.as_ref().expect("plain path has pool conv");
                Self::conv_bias(g, h, *pw, *pb, 2, 1)?
            };
            if let Some(taps) = taps.as_deref_mut() {
                taps.features.push((format!("down{lvl}"), resampled));
            }
            h = Self::conv_bias(g, resampled, d.chan.0, d.chan.1, 1, 1)?;
        }
        h = self.res_forward(g, &binds.mid, h, temb)?;
        for lvl in (0..levels).rev() {
            let u = &binds.up[lvl];
            let upsampled = if let Some(gb) = &u.gate {
                let e = Self::conv_bias(g, h, u.expand.0, u.expand.1, 1, 1)?;
                let out = wg_up(g, e, gb, None)?;
                if let Some(taps) = taps.as_deref_mut() {
                    taps.gates.push((format!("up{lvl}"), out.gates));
                }
                out.out
            } else {
                let up2 = g.upsample2x(h)?;
                Self::conv_bias(g, up2, u.expand.0, u.expand.1, 1, 1)?
            };
            if let Some(taps) = taps.as_deref_mut() {
                taps.features.push((format!("up{lvl}"), upsampled));
            }
            h = g.add(upsampled, skips[lvl])?;
            h = self.res_forward(g, &binds.dec[lvl], h, temb)?;
        }
        let pre = g.silu(h);
        let out = Self::conv_bias(g, pre, binds.head.0, binds.head.1, 1, 1)?;
        if let Some(taps) = taps.as_deref_mut() {
            taps.features.push(("out".to_string(), out));
        }
        Ok(out)
    }

    /// DDPM regression step over a batch: per-sample graphs (in parallel),
    /// gradients reduced in batch order. Returns the batch-mean loss.
    pub fn ddpm_backward(
        &mut self,
        x_t: &[Tensor],
        ts: &[usize],
        target_eps: &[Tensor],
        cond: Option<&[usize]>,
    ) -> Result<f64> {
        let b = x_t.len();
        if b == 0 || ts.len() != b || target_eps.len() != b {
            return Err(SdError::InvalidArgument(
                "batch arrays must be non-empty and aligned".to_string(),
            ));
        }
        let results: Vec<Result<(f64, Vec<Option<Vec<f64>>>)>> = x_t
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let mut g = Graph::new();
                let binds = self.bind(&mut g);
                let xv = g.constant(x.shape(), x.data().to_vec());
                let pred =
                    self.forward_one(&mut g, &binds, xv, ts[i], cond.map(|c| c[i]), None)?;
                let tgt = g.constant(target_eps[i].shape(), target_eps[i].data().to_vec());
                let mse = g.mse(pred, tgt)?;
                let loss = g.scale(mse, 1.0 / b as f64);
                g.backward(loss)?;
                let vars = Self::flat_binds(&binds);
                let grads = vars.iter().map(|v| g.grad(*v).map(|s| s.to_vec())).collect();
                Ok((g.scalar_value(loss), grads))
            })
            .collect();

        let mut total = 0.0;
        let mut acc: Vec<Option<Vec<f64>>> = Vec::new();
        for r in results {
            let (l, grads) = r?;
            total += l;
            if acc.is_empty() {
                acc = grads;
            } else {
                for (a, gnew) in acc.iter_mut().zip(grads) {
                    match (a.as_mut(), gnew) {
                        (Some(av), Some(gv)) => {
                            for (x, y) in av.iter_mut().zip(gv) {
                                *x += y;
                            }
                        }
                        (None, Some(gv)) => *a = Some(gv),
                        _ => {}
                    }
                }
            }
        }
        for (p, a) in self.params_mut().into_iter().zip(acc) {
            if let Some(gv) = a {
                p.accumulate_grad(&gv);
            }
        }
        Ok(total)
    }

    /// No-grad forward that also returns each resampler layer's per-band
    /// mean gate values, per sample.
    #[allow(clippy::type_complexity)]
    pub fn predict_gates(
        &self,
        x_t: &[Tensor],
        ts: &[usize],
        cond: Option<&[usize]>,
    ) -> Result<(Vec<Tensor>, Vec<Vec<(String, [f64; 4])>>)> {
        let results: Vec<Result<(Tensor, Vec<(String, [f64; 4])>)>> = x_t
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let mut g = Graph::new();
                let binds = self.bind(&mut g);
                let xv = g.constant(x.shape(), x.data().to_vec());
                let mut taps = Taps::default();
                let pred = self.forward_one(
                    &mut g,
                    &binds,
                    xv,
                    ts[i],
                    cond.map(|c| c[i]),
                    Some(&mut taps),
                )?;
                let out = Tensor::new(g.shape(pred).to_vec(), g.value(pred).to_vec())?;
                let gates = taps
                    .gates
                    .iter()
                    .map(|(label, v)| {
                        let gv = crate::models::gating::GatingVector::from_flat(g.value(*v))?;
                        Ok((label.clone(), gv.band_means()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((out, gates))
            })
            .collect();
        let mut preds = Vec::with_capacity(x_t.len());
        let mut gates = Vec::with_capacity(x_t.len());
        for r in results {
            let (p, gv) = r?;
            preds.push(p);
            gates.push(gv);
        }
        Ok((preds, gates))
    }
}

impl Denoiser for WgUnet {
    fn data_shape(&self) -> Vec<usize> {
        vec![self.cfg.in_channels, self.cfg.image_hw, self.cfg.image_hw]
    }

    fn predict(
        &self,
        x_t: &[Tensor],
        ts: &[usize],
        cond: Option<&[usize]>,
    ) -> Result<Vec<Tensor>> {
        let results: Vec<Result<Tensor>> = x_t
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let mut g = Graph::new();
                let binds = self.bind(&mut g);
                let xv = g.constant(x.shape(), x.data().to_vec());
                let pred =
                    self.forward_one(&mut g, &binds, xv, ts[i], cond.map(|c| c[i]), None)?;
                Tensor::new(g.shape(pred).to_vec(), g.value(pred).to_vec())
            })
            .collect();
        results.into_iter().collect()
    }
}
