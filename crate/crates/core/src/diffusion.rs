//! Noise schedules, the forward process, epsilon-prediction losses, and the
//! ancestral / DDIM reverse samplers with optional classifier-free guidance.
//!
//! The denoiser everywhere predicts the noise; the score-form reverse update
//! is used through the substitution `s = -eps / sqrt(1 - alpha_bar)`, which
//! turns the reverse chain into
//! `x_{t-1} = (x_t - beta_t/sqrt(1-alpha_bar_t) * eps_hat)/sqrt(alpha_t)
//!  + sqrt(beta_t) * z` with `sigma_t = sqrt(beta_t)`.

use crate::error::{Result, SdError};
use crate::tensor::Tensor;
use rand::Rng;

/// The beta/alpha/alpha_bar sequences, 1-indexed by step `t in [1, T]`.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta interpolation inclusive of both endpoints.
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max == 0 {
            return Err(SdError::InvalidArgument("schedule needs T >= 1".to_string()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(SdError::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let beta: Vec<f64> = if t_max == 1 {
            vec![beta_start]
        } else {
            (0..t_max)
                .map(|i| {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_max - 1) as f64
                })
                .collect()
        };
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(t_max);
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        Ok(NoiseSchedule {
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn t_max(&self) -> usize {
        self.beta.len()
    }

    fn check_t(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.beta.len() {
            return Err(SdError::InvalidArgument(format!(
                "step {t} outside [1, {}]",
                self.beta.len()
            )));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.check_t(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.check_t(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.check_t(t)?])
    }

    /// `alpha_bar` with the `t = 0` boundary mapped to 1 (identity).
    pub fn alpha_bar_or_one(&self, t: usize) -> Result<f64> {
        if t == 0 {
            Ok(1.0)
        } else {
            self.alpha_bar(t)
        }
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

/// Classifier-free guidance parameters; `w = 0` reduces exactly to the
/// conditional prediction.
#[derive(Clone, Copy, Debug)]
pub struct GuidanceConfig {
    pub w: f64,
    pub uncond_token: usize,
}

impl GuidanceConfig {
    pub fn new(w: f64, uncond_token: usize) -> Result<Self> {
        if w < 0.0 || !w.is_finite() {
            return Err(SdError::InvalidArgument(format!(
                "guidance weight must be >= 0, got {w}"
            )));
        }
        Ok(GuidanceConfig { w, uncond_token })
    }
}

/// An epsilon-prediction network over per-sample tensors.
pub trait Denoiser: Send + Sync {
    /// Shape of one sample, e.g. `[N]` or `[C, H, W]`.
    fn data_shape(&self) -> Vec<usize>;

    /// Batched forward pass without gradient bookkeeping. `ts` holds one
    /// step index per sample; `cond` an optional class id per sample.
    fn predict(&self, x_t: &[Tensor], ts: &[usize], cond: Option<&[usize]>) -> Result<Vec<Tensor>>;
}

/// Closed-form forward marginal `sqrt(ab_t) x0 + sqrt(1-ab_t) eps`;
/// `t = 0` is the identity boundary.
pub fn forward_diffuse(
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    if eps.shape() != x0.shape() {
        return Err(SdError::ShapeMismatch {
            op: "forward_diffuse",
            left: x0.shape().to_vec(),
            right: eps.shape().to_vec(),
        });
    }
    if t == 0 {
        return Ok(x0.clone());
    }
    let ab = sched.alpha_bar(t)?;
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(x, e)| sa * x + sn * e)
        .collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// Plain Monte-Carlo estimate of the DDPM objective for a given model:
/// uniform `t`, standard normal noise, mean squared error over batch and
/// elements. Gradient-carrying variants live on the concrete models.
pub fn ddpm_loss_value<R: Rng>(
    model: &dyn Denoiser,
    x0: &[Tensor],
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<f64> {
    if x0.is_empty() {
        return Err(SdError::InvalidArgument("empty batch".to_string()));
    }
    let ts: Vec<usize> = (0..x0.len())
        .map(|_| rng.random_range(1..=sched.t_max()))
        .collect();
    let eps: Vec<Tensor> = x0.iter().map(|x| Tensor::randn(x.shape(), rng)).collect();
    let x_t: Vec<Tensor> = x0
        .iter()
        .zip(&ts)
        .zip(&eps)
        .map(|((x, &t), e)| forward_diffuse(x, t, e, sched))
        .collect::<Result<_>>()?;
    let pred = model.predict(&x_t, &ts, None)?;
    let mut acc = 0.0;
    let mut n = 0usize;
    for (p, e) in pred.iter().zip(&eps) {
        for (pv, ev) in p.data().iter().zip(e.data()) {
            let d = ev - pv;
            acc += d * d;
        }
        n += p.numel();
    }
    let loss = acc / n as f64;
    if !loss.is_finite() {
        return Err(SdError::NumericalDivergence { step: 0 });
    }
    Ok(loss)
}

/// One ancestral reverse step with `sigma_t = sqrt(beta_t)`;
/// pass `z = 0` at the final step.
pub fn ancestral_step(
    x_t: &Tensor,
    t: usize,
    eps_hat: &Tensor,
    sched: &NoiseSchedule,
    z: &Tensor,
) -> Result<Tensor> {
    let beta = sched.beta(t)?;
    let alpha = sched.alpha(t)?;
    let ab = sched.alpha_bar(t)?;
    if eps_hat.shape() != x_t.shape() || z.shape() != x_t.shape() {
        return Err(SdError::ShapeMismatch {
            op: "ancestral_step",
            left: x_t.shape().to_vec(),
            right: eps_hat.shape().to_vec(),
        });
    }
    let coef = beta / (1.0 - ab).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let sigma = beta.sqrt();
    let data = x_t
        .data()
        .iter()
        .zip(eps_hat.data())
        .zip(z.data())
        .map(|((x, e), zv)| inv_sqrt_alpha * (x - coef * e) + sigma * zv)
        .collect();
    Tensor::new(x_t.shape().to_vec(), data)
}

/// One DDIM step from `t` to `t_prev < t`. With `eta = 0` the update is the
/// deterministic `sqrt(ab_prev) * xhat0 + sqrt(1-ab_prev) * eps_hat`; for
/// `eta > 0` the standard stochastic variant needs `z`.
pub fn ddim_step(
    x_t: &Tensor,
    t: usize,
    t_prev: usize,
    eps_hat: &Tensor,
    sched: &NoiseSchedule,
    eta: f64,
    z: Option<&Tensor>,
) -> Result<Tensor> {
    if t_prev >= t {
        return Err(SdError::InvalidArgument(format!(
            "ddim_step needs t_prev < t, got {t_prev} >= {t}"
        )));
    }
    if eps_hat.shape() != x_t.shape() {
        return Err(SdError::ShapeMismatch {
            op: "ddim_step",
            left: x_t.shape().to_vec(),
            right: eps_hat.shape().to_vec(),
        });
    }
    let ab_t = sched.alpha_bar(t)?;
    let ab_prev = sched.alpha_bar_or_one(t_prev)?;
    let sigma = if eta == 0.0 {
        0.0
    } else {
        eta * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt() * (1.0 - ab_t / ab_prev).sqrt()
    };
    if sigma > 0.0 && z.is_none() {
        return Err(SdError::InvalidArgument(
            "ddim_step with eta > 0 needs a noise tensor".to_string(),
        ));
    }
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let (sa_t, sn_t) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let sa_prev = ab_prev.sqrt();
    let data = x_t
        .data()
        .iter()
        .zip(eps_hat.data())
        .enumerate()
        .map(|(i, (x, e))| {
            let xhat0 = (x - sn_t * e) / sa_t;
            let noise = if sigma > 0.0 {
                sigma * z.unwrap().data()[i]
            } else {
                0.0
            };
            sa_prev * xhat0 + dir * e + noise
        })
        .collect();
    Tensor::new(x_t.shape().to_vec(), data)
}

/// `xhat0 = (x_t - sqrt(1-ab_t) eps_hat) / sqrt(ab_t)`.
pub fn predict_x0(x_t: &Tensor, t: usize, eps_hat: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    let ab = sched.alpha_bar(t)?;
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x_t
        .data()
        .iter()
        .zip(eps_hat.data())
        .map(|(x, e)| (x - sn * e) / sa)
        .collect();
    Tensor::new(x_t.shape().to_vec(), data)
}

/// Guided prediction `(1+w) eps(cond) - w eps(uncond)`. `w = 0`
/// short-circuits to the conditional forward pass, bit for bit.
pub fn cfg_predict(
    model: &dyn Denoiser,
    x_t: &[Tensor],
    ts: &[usize],
    cond: &[usize],
    g: &GuidanceConfig,
) -> Result<Vec<Tensor>> {
    if g.w == 0.0 {
        return model.predict(x_t, ts, Some(cond));
    }
    let eps_c = model.predict(x_t, ts, Some(cond))?;
    let uncond: Vec<usize> = vec![g.uncond_token; x_t.len()];
    let eps_u = model.predict(x_t, ts, Some(&uncond))?;
    eps_c
        .iter()
        .zip(&eps_u)
        .map(|(c, u)| {
            let data = c
                .data()
                .iter()
                .zip(u.data())
                .map(|(cv, uv)| (1.0 + g.w) * cv - g.w * uv)
                .collect();
            Tensor::new(c.shape().to_vec(), data)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SamplerKind {
    Ancestral,
    Ddim { n_steps: usize, eta: f64 },
}

#[derive(Clone, Copy, Debug)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Number of evenly spaced `xhat0` snapshots to record (0 = none; the
    /// last reverse step is always the final snapshot when > 0).
    pub snapshots: usize,
}

impl SamplerConfig {
    pub fn ancestral() -> Self {
        SamplerConfig {
            kind: SamplerKind::Ancestral,
            snapshots: 0,
        }
    }

    pub fn ddim(n_steps: usize, eta: f64) -> Self {
        SamplerConfig {
            kind: SamplerKind::Ddim { n_steps, eta },
            snapshots: 0,
        }
    }

    pub fn with_snapshots(mut self, n: usize) -> Self {
        self.snapshots = n;
        self
    }
}

/// An `xhat0` estimate recorded mid-trajectory.
#[derive(Clone, Debug)]
pub struct Snapshot {
    /// Position in the reverse step sequence (0-based).
    pub index: usize,
    /// The step `t` the estimate was formed at.
    pub t: usize,
    pub xhat0: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct SampleResult {
    pub samples: Vec<Tensor>,
    pub snapshots: Vec<Snapshot>,
}

fn snapshot_positions(total: usize, n: usize) -> Vec<usize> {
    if n == 0 || total == 0 {
        return Vec::new();
    }
    let n = n.min(total);
    let mut pos: Vec<usize> = (1..=n)
        .map(|k| (k * total).div_ceil(n).saturating_sub(1))
        .collect();
    pos.dedup();
    pos
}

/// Descending `(t, t_prev)` pairs for a DDIM subsequence of `n` steps.
pub fn ddim_times(t_max: usize, n_steps: usize) -> Result<Vec<(usize, usize)>> {
    if n_steps == 0 || n_steps > t_max {
        return Err(SdError::InvalidArgument(format!(
            "ddim needs 1 <= n_steps <= {t_max}, got {n_steps}"
        )));
    }
    let mut times: Vec<usize> = (0..=n_steps)
        .map(|k| ((k * t_max) as f64 / n_steps as f64).round() as usize)
        .collect();
    times.dedup();
    let pairs = times
        .windows(2)
        .rev()
        .map(|wnd| (wnd[1], wnd[0]))
        .collect();
    Ok(pairs)
}

/// Full reverse trajectory from `x_T ~ N(0, I)` for a batch.
pub fn sample<R: Rng>(
    model: &dyn Denoiser,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    batch: usize,
    rng: &mut R,
    cond: Option<&[usize]>,
    guidance: Option<&GuidanceConfig>,
) -> Result<SampleResult> {
    if batch == 0 {
        return Err(SdError::InvalidArgument("empty batch".to_string()));
    }
    if let Some(c) = cond {
        if c.len() != batch {
            return Err(SdError::InvalidArgument(format!(
                "{} condition ids for batch of {batch}",
                c.len()
            )));
        }
    }
    let shape = model.data_shape();
    let mut xs: Vec<Tensor> = (0..batch).map(|_| Tensor::randn(&shape, rng)).collect();
    let mut snapshots = Vec::new();

    let predict = |xs: &[Tensor], ts: &[usize]| -> Result<Vec<Tensor>> {
        match (cond, guidance) {
            (Some(c), Some(g)) => cfg_predict(model, xs, ts, c, g),
            (Some(c), None) => model.predict(xs, ts, Some(c)),
            (None, _) => model.predict(xs, ts, None),
        }
    };

    match cfg.kind {
        SamplerKind::Ancestral => {
            let total = sched.t_max();
            let snaps = snapshot_positions(total, cfg.snapshots);
            for (idx, t) in (1..=total).rev().enumerate() {
                let ts = vec![t; batch];
                let eps_hat = predict(&xs, &ts)?;
                if snaps.contains(&idx) {
                    let xhat0 = xs
                        .iter()
                        .zip(&eps_hat)
                        .map(|(x, e)| predict_x0(x, t, e, sched))
                        .collect::<Result<Vec<_>>>()?;
                    snapshots.push(Snapshot { index: idx, t, xhat0 });
                }
                let mut next = Vec::with_capacity(batch);
                for (x, e) in xs.iter().zip(&eps_hat) {
                    let z = if t > 1 {
                        Tensor::randn(&shape, rng)
                    } else {
                        Tensor::zeros(&shape)
                    };
                    let stepped = ancestral_step(x, t, e, sched, &z)?;
                    stepped.validate_finite().map_err(|_| {
                        SdError::NumericalDivergence { step: t as u64 }
                    })?;
                    next.push(stepped);
                }
                xs = next;
            }
        }
        SamplerKind::Ddim { n_steps, eta } => {
            let pairs = ddim_times(sched.t_max(), n_steps)?;
            let snaps = snapshot_positions(pairs.len(), cfg.snapshots);
            for (idx, &(t, t_prev)) in pairs.iter().enumerate() {
                let ts = vec![t; batch];
                let eps_hat = predict(&xs, &ts)?;
                if snaps.contains(&idx) {
                    let xhat0 = xs
                        .iter()
                        .zip(&eps_hat)
                        .map(|(x, e)| predict_x0(x, t, e, sched))
                        .collect::<Result<Vec<_>>>()?;
                    snapshots.push(Snapshot { index: idx, t, xhat0 });
                }
                let mut next = Vec::with_capacity(batch);
                for (x, e) in xs.iter().zip(&eps_hat) {
                    let z = if eta > 0.0 && t_prev > 0 {
                        Some(Tensor::randn(&shape, rng))
                    } else {
                        None
                    };
                    let stepped = ddim_step(x, t, t_prev, e, sched, eta, z.as_ref())?;
                    stepped.validate_finite().map_err(|_| {
                        SdError::NumericalDivergence { step: t as u64 }
                    })?;
                    next.push(stepped);
                }
                xs = next;
            }
        }
    }
    Ok(SampleResult {
        samples: xs,
        snapshots,
    })
}
