//! Python bindings: the transforms, the noise schedule, the optimal-filter
//! analysis, and thin denoiser handles. Data crosses the boundary as flat
//! row-major `list[float]` plus explicit dimensions.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sdlab::analysis;
use sdlab::diffusion::{self, Denoiser, SamplerConfig};
use sdlab::error::SdError;
use sdlab::lab::train::{stream_rng, STREAM_SAMPLE};
use sdlab::models::{MlpConfig, MlpDenoiser, Model, ModelSpec};
use sdlab::spectral::{self, PowerLawSpectrum};
use sdlab::tensor::Tensor;

fn err(e: SdError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Tensor> {
    Tensor::new(shape, data).map_err(err)
}

/// Single-level 2D Haar analysis: `[C,H,W]` -> stacked `[4C,H/2,W/2]`
/// bands in (LL, LH, HL, HH) order.
#[pyfunction]
fn dwt2(data: Vec<f64>, c: usize, h: usize, w: usize) -> PyResult<Vec<f64>> {
    if data.len() != c * h * w || h % 2 != 0 || w % 2 != 0 {
        return Err(PyValueError::new_err("need [C,H,W] data with even H, W"));
    }
    Ok(spectral::dwt2_stacked_raw(&data, c, h, w))
}

/// Inverse of `dwt2`: stacked `[4C,h,w]` -> `[C,2h,2w]`.
#[pyfunction]
fn idwt2(bands: Vec<f64>, c4: usize, h: usize, w: usize) -> PyResult<Vec<f64>> {
    if bands.len() != c4 * h * w || c4 % 4 != 0 {
        return Err(PyValueError::new_err("need [4C,h,w] stacked bands"));
    }
    Ok(spectral::idwt2_stacked_raw(&bands, c4, h, w))
}

/// 1D pair analysis -> (approx, detail).
#[pyfunction]
fn dwt1(x: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let t = tensor(vec![x.len()], x)?;
    let (a, d) = spectral::dwt_haar_1d(&t).map_err(err)?;
    Ok((a.data().to_vec(), d.data().to_vec()))
}

#[pyfunction]
fn idwt1(approx: Vec<f64>, detail: Vec<f64>) -> PyResult<Vec<f64>> {
    let a = tensor(vec![approx.len()], approx)?;
    let d = tensor(vec![detail.len()], detail)?;
    Ok(spectral::idwt_haar_1d(&a, &d).map_err(err)?.data().to_vec())
}

/// DFT coefficient magnitudes of an `[H,W]` image (DC at index 0).
#[pyfunction]
fn dft2_magnitudes(data: Vec<f64>, h: usize, w: usize) -> PyResult<Vec<f64>> {
    if data.len() != h * w {
        return Err(PyValueError::new_err("data length must be H*W"));
    }
    Ok(spectral::dft2_raw(&data, h, w)
        .iter()
        .map(|c| c.norm())
        .collect())
}

/// Radial profile of a magnitude grid -> (bin centers, means, counts).
#[pyfunction]
fn radial_profile(
    mags: Vec<f64>,
    h: usize,
    w: usize,
    n_bins: usize,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<usize>)> {
    let p = spectral::profile_from_magnitudes(&mags, h, w, n_bins).map_err(err)?;
    let centers = (0..p.n_bins()).map(|k| p.bin_center(k)).collect();
    Ok((centers, p.mean_magnitude.clone(), p.count.clone()))
}

/// Unit-variance power-law random field as a flat `[h*w]` list.
#[pyfunction]
fn sample_power_law_field(
    amplitude: f64,
    exponent: f64,
    h: usize,
    w: usize,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let ps = PowerLawSpectrum::new(amplitude, exponent).map_err(err)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    Ok(spectral::sample_power_law_field(&ps, h, w, &mut rng)
        .map_err(err)?
        .data()
        .to_vec())
}

/// The low/high cut-off scaled to this image size.
#[pyfunction]
fn scaled_cutoff(h: usize, w: usize) -> f64 {
    analysis::scaled_cutoff(h, w)
}

/// Signed low/high-frequency errors between two image batches
/// (each image a flat `[h*w]` list).
#[pyfunction]
fn freq_error(
    real: Vec<Vec<f64>>,
    gen: Vec<Vec<f64>>,
    h: usize,
    w: usize,
    cutoff: f64,
    n_bins: usize,
) -> PyResult<(f64, f64)> {
    let pack = |batch: Vec<Vec<f64>>| -> PyResult<Vec<Tensor>> {
        batch
            .into_iter()
            .map(|row| tensor(vec![h, w], row))
            .collect()
    };
    let report =
        analysis::freq_error(&pack(real)?, &pack(gen)?, cutoff, n_bins).map_err(err)?;
    Ok((report.low_error, report.high_error))
}

/// `H*(f) = 1 / (ab * S(f) + 1 - ab)` for a power-law spectrum.
#[pyfunction]
fn wiener_response(
    amplitude: f64,
    exponent: f64,
    alpha_bar: f64,
    freqs: Vec<f64>,
) -> PyResult<Vec<f64>> {
    let ps = PowerLawSpectrum::new(amplitude, exponent).map_err(err)?;
    Ok(analysis::wiener_response_power_law(&ps, alpha_bar, &freqs)
        .map_err(err)?
        .response)
}

/// Reconstruction response; `variant` is "caption" or "text".
#[pyfunction]
fn reconstruction_response(
    amplitude: f64,
    exponent: f64,
    alpha_bar: f64,
    freqs: Vec<f64>,
    variant: &str,
) -> PyResult<Vec<f64>> {
    let ps = PowerLawSpectrum::new(amplitude, exponent).map_err(err)?;
    let wr = analysis::wiener_response_power_law(&ps, alpha_bar, &freqs).map_err(err)?;
    let v = match variant {
        "caption" => analysis::ReconstructionVariant::Caption,
        "text" => analysis::ReconstructionVariant::Text,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown variant '{other}'"
            )))
        }
    };
    Ok(analysis::reconstruction_response(&wr, v))
}

/// Least-squares filter fit on fresh power-law fields; returns
/// (freqs, fitted, closed_form).
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn fit_wiener_oracle(
    amplitude: f64,
    exponent: f64,
    alpha_bar: f64,
    hw: usize,
    n_bins: usize,
    n_samples: usize,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let ps = PowerLawSpectrum::new(amplitude, exponent).map_err(err)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let signals: Vec<Tensor> = (0..n_samples)
        .map(|_| spectral::sample_power_law_field(&ps, hw, hw, &mut rng))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let fit =
        analysis::fit_optimal_linear_filter(&signals, alpha_bar, n_bins, &mut rng).map_err(err)?;
    Ok((fit.freqs, fit.fitted, fit.closed_form))
}

/// Linear beta schedule with the closed-form forward marginal.
#[pyclass]
struct Schedule {
    inner: diffusion::NoiseSchedule,
}

#[pymethods]
impl Schedule {
    #[new]
    fn new(t: usize, beta_start: f64, beta_end: f64) -> PyResult<Self> {
        Ok(Schedule {
            inner: diffusion::NoiseSchedule::linear(t, beta_start, beta_end).map_err(err)?,
        })
    }

    fn t_max(&self) -> usize {
        self.inner.t_max()
    }

    fn beta(&self, t: usize) -> PyResult<f64> {
        self.inner.beta(t).map_err(err)
    }

    fn alpha_bar(&self, t: usize) -> PyResult<f64> {
        self.inner.alpha_bar(t).map_err(err)
    }

    /// `sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`.
    fn forward_diffuse(&self, x0: Vec<f64>, t: usize, eps: Vec<f64>) -> PyResult<Vec<f64>> {
        let n = x0.len();
        let x = tensor(vec![n], x0)?;
        let e = tensor(vec![n], eps)?;
        Ok(diffusion::forward_diffuse(&x, t, &e, &self.inner)
            .map_err(err)?
            .data()
            .to_vec())
    }
}

/// Denoiser handle built from an architecture descriptor (JSON, the same
/// format checkpoints embed).
#[pyclass]
struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    /// `spec_json` examples:
    /// `{"kind":"mlp","data_dim":64,"hidden":64,"temb_dim":32}` or
    /// `{"kind":"wg_unet","in_channels":1,"image_hw":16,"widths":[4,8],
    ///   "temb_dim":8,"n_classes":null,"plain_resample":false}`.
    #[new]
    fn new(spec_json: &str, seed: u64) -> PyResult<Self> {
        let spec: ModelSpec = serde_json::from_str(spec_json)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Ok(PyModel {
            inner: spec.build(&mut rng).map_err(err)?,
        })
    }

    /// Loads the model stored in a training checkpoint.
    #[staticmethod]
    fn from_checkpoint(path: &str) -> PyResult<Self> {
        let (model, _) = sdlab::lab::train::load_model(std::path::Path::new(path)).map_err(err)?;
        Ok(PyModel { inner: model })
    }

    fn data_shape(&self) -> Vec<usize> {
        self.inner.data_shape()
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Noise prediction for one flat sample at step `t`.
    #[pyo3(signature = (x, t, cond=None))]
    fn predict(&self, x: Vec<f64>, t: usize, cond: Option<usize>) -> PyResult<Vec<f64>> {
        let shape = self.inner.data_shape();
        let xt = tensor(shape, x)?;
        let cond_vec = cond.map(|c| vec![c]);
        let out = self
            .inner
            .predict(&[xt], &[t], cond_vec.as_deref())
            .map_err(err)?;
        Ok(out[0].data().to_vec())
    }

    /// Draws `n` samples with the given sampler ("ancestral" or "ddim").
    #[pyo3(signature = (schedule, n, seed, sampler="ddim", ddim_steps=50))]
    fn sample(
        &self,
        schedule: &Schedule,
        n: usize,
        seed: u64,
        sampler: &str,
        ddim_steps: usize,
    ) -> PyResult<Vec<Vec<f64>>> {
        let cfg = match sampler {
            "ancestral" => SamplerConfig::ancestral(),
            "ddim" => SamplerConfig::ddim(ddim_steps, 0.0),
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown sampler '{other}'"
                )))
            }
        };
        let mut rng = stream_rng(seed, STREAM_SAMPLE);
        let out = diffusion::sample(&self.inner, &schedule.inner, &cfg, n, &mut rng, None, None)
            .map_err(err)?;
        Ok(out.samples.iter().map(|t| t.data().to_vec()).collect())
    }
}

/// A minimally-trained MLP denoiser for quick smoke checks: runs a few
/// regression steps on the given signal rows and returns the loss curve.
#[pyfunction]
#[pyo3(signature = (signals, data_dim, hidden, steps, lr, seed, t_max=1000))]
fn train_mlp_quick(
    signals: Vec<Vec<f64>>,
    data_dim: usize,
    hidden: usize,
    steps: usize,
    lr: f64,
    seed: u64,
    t_max: usize,
) -> PyResult<Vec<f64>> {
    use rand::Rng;
    let sched = diffusion::NoiseSchedule::linear(t_max, 1e-4, 0.02).map_err(err)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut model = MlpDenoiser::new(
        MlpConfig {
            data_dim,
            hidden,
            temb_dim: 32,
        },
        &mut rng,
    );
    let rows: Vec<Tensor> = signals
        .into_iter()
        .map(|row| tensor(vec![data_dim], row))
        .collect::<PyResult<_>>()?;
    if rows.is_empty() {
        return Err(PyValueError::new_err("empty signal batch"));
    }
    let sizes: Vec<usize> = model.named_params().iter().map(|(_, t)| t.numel()).collect();
    let mut opt = sdlab::optim::AdamW::new(&sizes, sdlab::optim::AdamWConfig::default());
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let batch: Vec<Tensor> = (0..16)
            .map(|_| rows[rng.random_range(0..rows.len())].clone())
            .collect();
        let ts: Vec<usize> = (0..16).map(|_| rng.random_range(1..=t_max)).collect();
        let eps: Vec<Tensor> = (0..16)
            .map(|_| Tensor::randn(&[data_dim], &mut rng))
            .collect();
        let x_t: Vec<Tensor> = batch
            .iter()
            .zip(&ts)
            .zip(&eps)
            .map(|((x, &t), e)| diffusion::forward_diffuse(x, t, e, &sched))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        for p in model.params_mut() {
            p.zero_grad();
        }
        let loss = model.ddpm_backward(&x_t, &ts, &eps).map_err(err)?;
        let mut params = model.params_mut();
        opt.step(&mut params, lr).map_err(err)?;
        losses.push(loss);
    }
    Ok(losses)
}

#[pymodule]
fn sdlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(dwt2, m)?)?;
    m.add_function(wrap_pyfunction!(idwt2, m)?)?;
    m.add_function(wrap_pyfunction!(dwt1, m)?)?;
    m.add_function(wrap_pyfunction!(idwt1, m)?)?;
    m.add_function(wrap_pyfunction!(dft2_magnitudes, m)?)?;
    m.add_function(wrap_pyfunction!(radial_profile, m)?)?;
    m.add_function(wrap_pyfunction!(sample_power_law_field, m)?)?;
    m.add_function(wrap_pyfunction!(scaled_cutoff, m)?)?;
    m.add_function(wrap_pyfunction!(freq_error, m)?)?;
    m.add_function(wrap_pyfunction!(wiener_response, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruction_response, m)?)?;
    m.add_function(wrap_pyfunction!(fit_wiener_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(train_mlp_quick, m)?)?;
    m.add_class::<Schedule>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
