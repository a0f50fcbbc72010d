//! Synthetic dataset generation and storage.
//!
//! `toy1d`: exact evaluations of `f(x) = cos(alpha * 2*pi * x)` on a uniform
//! grid, with `P(alpha=3) = 0.2` and `P(alpha=5) = 0.8`.
//! `texture2d`: unit-variance power-law fields with exponent 2.
//! `class2d`: two-class mixture of power-law exponents 1.5 and 3.0.

use crate::error::{Result, SdError};
use crate::lab::arrayio::{find, read_arrays, write_arrays, NamedArray};
use crate::lab::config::{DataSpec, Task};
use crate::spectral::powerlaw::{sample_power_law_field, PowerLawSpectrum};
use crate::tensor::Tensor;
use rand::Rng;
use std::f64::consts::PI;
use std::path::Path;

pub const TOY1D_MINORITY_ALPHA: usize = 3;
pub const TOY1D_MAJORITY_ALPHA: usize = 5;
pub const TOY1D_MINORITY_P: f64 = 0.2;
pub const CLASS2D_EXPONENTS: [f64; 2] = [1.5, 3.0];

#[derive(Clone, Debug)]
pub struct Dataset {
    pub task: Task,
    pub samples: Vec<Tensor>,
    /// toy1d: the alpha per row; class2d: the class id; texture2d: empty.
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// First `frac` of the rows (the training split).
    pub fn head(&self, frac: f64) -> Vec<Tensor> {
        let n = ((self.len() as f64) * frac).round() as usize;
        self.samples[..n.min(self.len())].to_vec()
    }

    /// Remaining rows after `head(frac)` (the held-out split).
    pub fn tail(&self, frac: f64) -> Vec<Tensor> {
        let n = ((self.len() as f64) * frac).round() as usize;
        self.samples[n.min(self.len())..].to_vec()
    }
}

/// Exact cosine evaluation on the `n_points` grid `x = i / n_points`.
pub fn toy_signal(alpha: usize, n_points: usize) -> Tensor {
    let data = (0..n_points)
        .map(|i| (alpha as f64 * 2.0 * PI * i as f64 / n_points as f64).cos())
        .collect();
    Tensor::new(vec![n_points], data).expect("length agrees")
}

pub fn gen_data<R: Rng>(task: Task, spec: &DataSpec, rng: &mut R) -> Result<Dataset> {
    let n = spec.n_samples;
    match task {
        Task::Toy1d => {
            let mut samples = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let alpha = if rng.random::<f64>() < TOY1D_MINORITY_P {
                    TOY1D_MINORITY_ALPHA
                } else {
                    TOY1D_MAJORITY_ALPHA
                };
                samples.push(toy_signal(alpha, spec.n_points));
                labels.push(alpha as f64);
            }
            Ok(Dataset {
                task,
                samples,
                labels,
            })
        }
        Task::Texture2d => {
            let ps = PowerLawSpectrum::new(1.0, 2.0)?;
            let hw = spec.image_hw;
            let samples = (0..n)
                .map(|_| {
                    let f = sample_power_law_field(&ps, hw, hw, rng)?;
                    Tensor::new(vec![1, hw, hw], f.data().to_vec())
                })
                .collect::<Result<_>>()?;
            Ok(Dataset {
                task,
                samples,
                labels: Vec::new(),
            })
        }
        Task::Class2d => {
            let hw = spec.image_hw;
            let specs = [
                PowerLawSpectrum::new(1.0, CLASS2D_EXPONENTS[0])?,
                PowerLawSpectrum::new(1.0, CLASS2D_EXPONENTS[1])?,
            ];
            let mut samples = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let class = usize::from(rng.random::<bool>());
                let f = sample_power_law_field(&specs[class], hw, hw, rng)?;
                samples.push(Tensor::new(vec![1, hw, hw], f.data().to_vec())?);
                labels.push(class as f64);
            }
            Ok(Dataset {
                task,
                samples,
                labels,
            })
        }
    }
}

fn task_id(task: Task) -> f64 {
    match task {
        Task::Toy1d => 0.0,
        Task::Texture2d => 1.0,
        Task::Class2d => 2.0,
    }
}

fn task_from_id(id: f64) -> Result<Task> {
    match id as i64 {
        0 => Ok(Task::Toy1d),
        1 => Ok(Task::Texture2d),
        2 => Ok(Task::Class2d),
        other => Err(SdError::Checkpoint(format!("unknown task id {other}"))),
    }
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    if ds.is_empty() {
        return Err(SdError::InvalidArgument("empty dataset".to_string()));
    }
    let mut shape = vec![ds.len()];
    shape.extend_from_slice(ds.samples[0].shape());
    let mut flat = Vec::with_capacity(shape.iter().product());
    for s in &ds.samples {
        if s.shape() != ds.samples[0].shape() {
            return Err(SdError::InvalidArgument(
                "ragged dataset rows".to_string(),
            ));
        }
        flat.extend_from_slice(s.data());
    }
    let mut arrays = vec![
        NamedArray::new("task_id", vec![1], vec![task_id(ds.task)])?,
        NamedArray::new("samples", shape, flat)?,
    ];
    if !ds.labels.is_empty() {
        arrays.push(NamedArray::new(
            "labels",
            vec![ds.labels.len()],
            ds.labels.clone(),
        )?);
    }
    write_arrays(path, &arrays)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let arrays = read_arrays(path)?;
    let task = task_from_id(find(&arrays, "task_id")?.data[0])?;
    let samples_arr = find(&arrays, "samples")?;
    let n = samples_arr.shape[0];
    let row_shape: Vec<usize> = samples_arr.shape[1..].to_vec();
    let row_len: usize = row_shape.iter().product();
    let samples = (0..n)
        .map(|i| {
            Tensor::new(
                row_shape.clone(),
                samples_arr.data[i * row_len..(i + 1) * row_len].to_vec(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    for s in &samples {
        s.validate_finite()?;
    }
    let labels = arrays
        .iter()
        .find(|a| a.name == "labels")
        .map(|a| a.data.clone())
        .unwrap_or_default();
    Ok(Dataset {
        task,
        samples,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::fft::dft1_raw;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use tempfile::tempdir;

    fn spec(n: usize) -> DataSpec {
        DataSpec {
            n_samples: n,
            n_points: 64,
            image_hw: 8,
        }
    }

    #[test]
    fn toy1d_mixture_weight_is_binomial_consistent() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let ds = gen_data(Task::Toy1d, &spec(10_000), &mut rng).unwrap();
        let minority = ds
            .labels
            .iter()
            .filter(|&&a| a == TOY1D_MINORITY_ALPHA as f64)
            .count();
        let p_hat = minority as f64 / 10_000.0;
        // 3 sigma for a binomial with p = 0.2, n = 1e4.
        let sigma = (0.2f64 * 0.8 / 10_000.0).sqrt();
        assert!((p_hat - 0.2).abs() < 3.0 * sigma, "p_hat {p_hat}");
    }

    #[test]
    fn every_toy_row_has_exactly_two_nonzero_bins() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let ds = gen_data(Task::Toy1d, &spec(32), &mut rng).unwrap();
        for (row, &alpha) in ds.samples.iter().zip(&ds.labels) {
            let spec = dft1_raw(row.data());
            let alpha = alpha as usize;
            for (k, c) in spec.iter().enumerate() {
                let mag = c.norm();
                if k == alpha || k == 64 - alpha {
                    assert!((mag - 32.0).abs() < 1e-9, "bin {k}: {mag}");
                } else {
                    assert!(mag < 1e-9, "unexpected mass at bin {k}: {mag}");
                }
            }
        }
    }

    #[test]
    fn generated_files_are_byte_identical_per_seed() {
        let dir = tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
        for (path, seed) in [(&p1, 9u64), (&p2, 9u64)] {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let ds = gen_data(Task::Class2d, &spec(16), &mut rng).unwrap();
            save_dataset(&ds, path).unwrap();
        }
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn dataset_round_trips_with_labels_and_splits() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.bin");
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let ds = gen_data(Task::Toy1d, &spec(10), &mut rng).unwrap();
        save_dataset(&ds, &p).unwrap();
        let back = load_dataset(&p).unwrap();
        assert_eq!(back.task, Task::Toy1d);
        assert_eq!(back.len(), 10);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.samples[3].data(), ds.samples[3].data());
        assert_eq!(back.head(0.8).len(), 8);
        assert_eq!(back.tail(0.8).len(), 2);
    }

    #[test]
    fn texture_fields_are_standardized() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let ds = gen_data(Task::Texture2d, &spec(3), &mut rng).unwrap();
        for s in &ds.samples {
            assert_eq!(s.shape(), &[1, 8, 8]);
            let mean: f64 = s.data().iter().sum::<f64>() / 64.0;
            let var: f64 = s.data().iter().map(|v| v * v).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-10);
        }
    }
}
