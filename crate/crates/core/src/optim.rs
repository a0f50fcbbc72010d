//! AdamW with decoupled weight decay.
//!
//! Decay is applied directly to the parameters (`p *= 1 - lr*wd`), not
//! through the gradient; moments are bias-corrected.

use crate::error::{Result, SdError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Optimizer state aligned with a fixed parameter ordering.
#[derive(Clone, Debug)]
pub struct AdamW {
    cfg: AdamWConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(param_sizes: &[usize], cfg: AdamWConfig) -> Self {
        AdamW {
            cfg,
            t: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn config(&self) -> AdamWConfig {
        self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over `params`, reading each tensor's accumulated `grad`.
    /// A missing grad is treated as zero (the decoupled decay still runs).
    pub fn step(&mut self, params: &mut [&mut Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(SdError::InvalidArgument(format!(
                "optimizer tracks {} params, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for (idx, p) in params.iter_mut().enumerate() {
            if p.numel() != self.m[idx].len() {
                return Err(SdError::InvalidArgument(format!(
                    "optimizer state {} has {} entries, param has {}",
                    idx,
                    self.m[idx].len(),
                    p.numel()
                )));
            }
            let decay = 1.0 - lr * self.cfg.weight_decay;
            let grad = p.grad.clone();
            let data = p.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                let m = &mut self.m[idx][i];
                let v = &mut self.v[idx][i];
                *m = self.cfg.beta1 * *m + (1.0 - self.cfg.beta1) * g;
                *v = self.cfg.beta2 * *v + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                data[i] = data[i] * decay - lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }

    /// Flattened (m, v) state for checkpointing, in parameter order.
    pub fn state(&self) -> (u64, &[Vec<f64>], &[Vec<f64>]) {
        (self.t, &self.m, &self.v)
    }

    pub fn restore(&mut self, t: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(SdError::Checkpoint(
                "optimizer state cardinality mismatch".to_string(),
            ));
        }
        for (a, b) in m.iter().zip(&self.m) {
            if a.len() != b.len() {
                return Err(SdError::Checkpoint(
                    "optimizer state length mismatch".to_string(),
                ));
            }
        }
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap().with_grad()
    }

    #[test]
    fn zero_grad_zero_decay_leaves_params_unchanged() {
        let mut p = scalar_param(1.5);
        p.zero_grad();
        let mut opt = AdamW::new(&[1], AdamWConfig::default());
        opt.step(&mut [&mut p], 0.01).unwrap();
        assert_eq!(p.data()[0], 1.5);
    }

    #[test]
    fn first_step_is_sign_like() {
        // From zero state, m_hat = g and v_hat = g^2, so the update is
        // -lr * g / (|g| + eps), i.e. almost exactly -lr * sign(g).
        for &g in &[0.37, -2.2, 14.0] {
            let mut p = scalar_param(0.0);
            p.zero_grad();
            p.accumulate_grad(&[g]);
            let cfg = AdamWConfig::default();
            let mut opt = AdamW::new(&[1], cfg);
            let lr = 0.05;
            opt.step(&mut [&mut p], lr).unwrap();
            let expected = -lr * g / (g.abs() + cfg.eps);
            assert!((p.data()[0] - expected).abs() < 1e-15);
            assert!((p.data()[0] + lr * g.signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn decoupled_decay_shrinks_by_one_minus_lr_wd() {
        let mut p = scalar_param(1.0);
        p.zero_grad(); // grad stays zero
        let cfg = AdamWConfig {
            weight_decay: 0.1,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(&[1], cfg);
        opt.step(&mut [&mut p], 0.01).unwrap();
        assert!((p.data()[0] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn state_round_trip() {
        let mut p = scalar_param(1.0);
        p.zero_grad();
        p.accumulate_grad(&[0.5]);
        let mut opt = AdamW::new(&[1], AdamWConfig::default());
        opt.step(&mut [&mut p], 0.1).unwrap();
        let (t, m, v) = opt.state();
        let mut opt2 = AdamW::new(&[1], AdamWConfig::default());
        opt2.restore(t, m.to_vec(), v.to_vec()).unwrap();
        let (t2, m2, v2) = opt2.state();
        assert_eq!(t, t2);
        assert_eq!(m, m2);
        assert_eq!(v, v2);
    }
}
