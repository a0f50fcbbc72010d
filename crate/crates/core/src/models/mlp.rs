//! Two-layer feed-forward denoiser for 1D signals: the signal and its
//! sinusoidal step embedding are concatenated, passed through one SiLU
//! hidden layer of `hidden` units, and mapped back to signal size.

use crate::diffusion::Denoiser;
use crate::error::{Result, SdError};
use crate::graph::{Graph, Var};
use crate::models::embed::sinusoidal_embedding;
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Clone, Copy, Debug)]
pub struct MlpConfig {
    pub data_dim: usize,
    pub hidden: usize,
    pub temb_dim: usize,
}

#[derive(Clone, Debug)]
pub struct MlpDenoiser {
    cfg: MlpConfig,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

pub struct MlpBinds {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl MlpDenoiser {
    /// Output layer starts at zero so the untrained model predicts zero noise.
    pub fn new<R: Rng>(cfg: MlpConfig, rng: &mut R) -> Self {
        let in_dim = cfg.data_dim + cfg.temb_dim;
        let std = (1.0 / in_dim as f64).sqrt();
        MlpDenoiser {
            cfg,
            w1: Tensor::randn_scaled(&[in_dim, cfg.hidden], std, rng).with_grad(),
            b1: Tensor::zeros(&[cfg.hidden]).with_grad(),
            w2: Tensor::zeros(&[cfg.hidden, cfg.data_dim]).with_grad(),
            b2: Tensor::zeros(&[cfg.data_dim]).with_grad(),
        }
    }

    pub fn config(&self) -> MlpConfig {
        self.cfg
    }

    pub fn bind(&self, g: &mut Graph) -> MlpBinds {
        MlpBinds {
            w1: g.leaf(&self.w1),
            b1: g.leaf(&self.b1),
            w2: g.leaf(&self.w2),
            b2: g.leaf(&self.b2),
        }
    }

    pub fn pull_grads(&mut self, g: &Graph, binds: &MlpBinds) {
        g.pull_grad(binds.w1, &mut self.w1);
        g.pull_grad(binds.b1, &mut self.b1);
        g.pull_grad(binds.w2, &mut self.w2);
        g.pull_grad(binds.b2, &mut self.b2);
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("mlp.w1".to_string(), &self.w1),
            ("mlp.b1".to_string(), &self.b1),
            ("mlp.w2".to_string(), &self.w2),
            ("mlp.b2".to_string(), &self.b2),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn pack_rows(&self, xs: &[Tensor]) -> Result<Vec<f64>> {
        let mut rows = Vec::with_capacity(xs.len() * self.cfg.data_dim);
        for x in xs {
            if x.shape() != [self.cfg.data_dim] {
                return Err(SdError::ShapeMismatch {
                    op: "mlp_forward",
                    left: vec![self.cfg.data_dim],
                    right: x.shape().to_vec(),
                });
            }
            rows.extend_from_slice(x.data());
        }
        Ok(rows)
    }

    fn temb_rows(&self, ts: &[usize]) -> Vec<f64> {
        let mut rows = Vec::with_capacity(ts.len() * self.cfg.temb_dim);
        for &t in ts {
            rows.extend(sinusoidal_embedding(t, self.cfg.temb_dim));
        }
        rows
    }

    /// Batched graph forward over `[B, data_dim]` rows.
    pub fn forward_rows(
        &self,
        g: &mut Graph,
        binds: &MlpBinds,
        x_rows: Var,
        ts: &[usize],
    ) -> Result<Var> {
        let b = g.shape(x_rows)[0];
        if b != ts.len() {
            return Err(SdError::InvalidArgument(format!(
                "{b} rows but {} step indices",
                ts.len()
            )));
        }
        let temb = g.constant(&[b, self.cfg.temb_dim], self.temb_rows(ts));
        let cat = g.concat_cols(x_rows, temb)?;
        let h = g.linear(cat, binds.w1, binds.b1)?;
        let h = g.silu(h);
        g.linear(h, binds.w2, binds.b2)
    }

    /// DDPM regression step: builds the batched graph, backpropagates the
    /// mean squared error against the target noise, and accumulates
    /// parameter gradients. Returns the loss value.
    pub fn ddpm_backward(
        &mut self,
        x_t: &[Tensor],
        ts: &[usize],
        target_eps: &[Tensor],
    ) -> Result<f64> {
        let b = x_t.len();
        let mut g = Graph::new();
        let binds = self.bind(&mut g);
        let rows = self.pack_rows(x_t)?;
        let x = g.constant(&[b, self.cfg.data_dim], rows);
        let pred = self.forward_rows(&mut g, &binds, x, ts)?;
        let target = g.constant(&[b, self.cfg.data_dim], self.pack_rows(target_eps)?);
        let loss = g.mse(pred, target)?;
        g.backward(loss)?;
        self.pull_grads(&g, &binds);
        Ok(g.scalar_value(loss))
    }
}

impl Denoiser for MlpDenoiser {
    fn data_shape(&self) -> Vec<usize> {
        vec![self.cfg.data_dim]
    }

    fn predict(
        &self,
        x_t: &[Tensor],
        ts: &[usize],
        _cond: Option<&[usize]>,
    ) -> Result<Vec<Tensor>> {
        let b = x_t.len();
        let mut g = Graph::new();
        let binds = self.bind(&mut g);
        let x = g.constant(&[b, self.cfg.data_dim], self.pack_rows(x_t)?);
        let pred = self.forward_rows(&mut g, &binds, x, ts)?;
        let flat = g.value(pred);
        Ok((0..b)
            .map(|i| {
                Tensor::new(
                    vec![self.cfg.data_dim],
                    flat[i * self.cfg.data_dim..(i + 1) * self.cfg.data_dim].to_vec(),
                )
                .expect("row length agrees")
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn tiny() -> MlpDenoiser {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        MlpDenoiser::new(
            MlpConfig {
                data_dim: 8,
                hidden: 4,
                temb_dim: 4,
            },
            &mut rng,
        )
    }

    #[test]
    fn zero_initialized_output_layer_predicts_zero() {
        let m = tiny();
        let xs = vec![Tensor::full(&[8], 0.3)];
        let out = m.predict(&xs, &[5], None).unwrap();
        assert_eq!(out[0].shape(), &[8]);
        assert!(out[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_zero_weights_give_zero_output() {
        let mut m = tiny();
        for p in m.params_mut() {
            p.data_mut().fill(0.0);
        }
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let xs = vec![Tensor::randn(&[8], &mut rng), Tensor::randn(&[8], &mut rng)];
        let out = m.predict(&xs, &[3, 900], None).unwrap();
        for o in &out {
            assert!(o.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gradient_check_full_model() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut m = tiny();
        // Give the output layer nonzero weights so all paths carry signal.
        m.w2 = Tensor::randn_scaled(&[4, 8], 0.5, &mut rng).with_grad();
        m.b2 = Tensor::randn_scaled(&[8], 0.5, &mut rng).with_grad();

        let x_t = vec![Tensor::randn(&[8], &mut rng), Tensor::randn(&[8], &mut rng)];
        let eps = vec![Tensor::randn(&[8], &mut rng), Tensor::randn(&[8], &mut rng)];
        let ts = vec![17usize, 530];

        let flat0: Vec<f64> = m
            .named_params()
            .iter()
            .flat_map(|(_, t)| t.data().to_vec())
            .collect();
        let sizes: Vec<usize> = m.named_params().iter().map(|(_, t)| t.numel()).collect();

        let eval = |v: &[f64]| {
            let mut m2 = m.clone();
            let mut off = 0;
            for (p, &n) in m2.params_mut().into_iter().zip(&sizes) {
                p.data_mut().copy_from_slice(&v[off..off + n]);
                off += n;
            }
            let mut g = Graph::new();
            let binds = m2.bind(&mut g);
            let x = g.constant(&[2, 8], m2.pack_rows(&x_t).unwrap());
            let pred = m2.forward_rows(&mut g, &binds, x, &ts).unwrap();
            let target = g.constant(&[2, 8], m2.pack_rows(&eps).unwrap());
            let l = g.mse(pred, target).unwrap();
            g.scalar_value(l)
        };
        let fd = check::numeric_gradient(&mut |v: &[f64]| eval(v), &flat0, 1e-6);

        let mut m3 = m.clone();
        for p in m3.params_mut() {
            p.zero_grad();
        }
        m3.ddpm_backward(&x_t, &ts, &eps).unwrap();
        let analytic: Vec<f64> = m3
            .named_params()
            .iter()
            .flat_map(|(_, t)| t.grad.clone().unwrap())
            .collect();
        let err = check::max_rel_err(&analytic, &fd);
        assert!(err < 1e-4, "mlp gradient mismatch {err}");
    }
}
