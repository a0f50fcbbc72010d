//! Post-training analyses: frequency-evolution reports, gating-dynamics
//! curves, the low/high-frequency error metric, and DFT difference maps
//! between two generated batches.

use crate::analysis::{
    batch_mean_magnitudes, freq_error, frequency_evolution_report, scaled_cutoff, EvolutionReport,
};
use crate::diffusion::{ancestral_step, ddim_step, ddim_times, NoiseSchedule, SamplerKind};
use crate::error::{Result, SdError};
use crate::lab::arrayio::{find, read_arrays, write_arrays, NamedArray};
use crate::lab::config::ExperimentConfig;
use crate::lab::dataset::load_dataset;
use crate::lab::pgm::{write_pgm, write_pgm_scaled};
use crate::lab::train::{load_model, stream_rng, STREAM_SAMPLE};
use crate::models::Model;
use crate::tensor::Tensor;
use rand::Rng;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// Samples with snapshots and writes `evolution.csv` plus PGM frames with a
/// `snapshots.csv` index (`step,t,file`). Returns the report.
pub fn run_evolution(
    cfg: &ExperimentConfig,
    model: &Model,
    out_dir: &Path,
    batch: usize,
    n_snapshots: usize,
    n_bins: usize,
) -> Result<EvolutionReport> {
    std::fs::create_dir_all(out_dir)?;
    let sched = NoiseSchedule::linear(cfg.schedule.t, cfg.schedule.beta_start, cfg.schedule.beta_end)?;
    let sampler = cfg.sampler.to_config().with_snapshots(n_snapshots);
    let mut rng = stream_rng(cfg.seed, STREAM_SAMPLE);
    // Re-run sampling to capture frames alongside the profile report.
    let out = crate::diffusion::sample(model, &sched, &sampler, batch, &mut rng, None, None)?;
    let mut index = std::io::BufWriter::new(std::fs::File::create(out_dir.join("snapshots.csv"))?);
    writeln!(index, "step,t,file")?;
    for snap in &out.snapshots {
        let file = format!("snapshot_{:03}.pgm", snap.index);
        write_pgm(&out_dir.join(&file), &snap.xhat0[0])?;
        writeln!(index, "{},{},{}", snap.index, snap.t, file)?;
    }
    index.flush()?;

    let mut rng = stream_rng(cfg.seed, STREAM_SAMPLE);
    let report = frequency_evolution_report(model, &sched, &sampler, batch, n_bins, &mut rng)?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(out_dir.join("evolution.csv"))?);
    report.write_csv(&mut csv)?;
    csv.flush()?;
    Ok(report)
}

/// Per-step gate statistics over sampled trajectories. Rows:
/// `t,layer,band,mean,std` aggregated over the batch.
pub struct GatingCurves {
    /// Keyed by (t, layer, band index 0..4): (mean, std).
    pub rows: Vec<(usize, String, usize, f64, f64)>,
}

const BAND_NAMES: [&str; 4] = ["ll", "lh", "hl", "hh"];

pub fn run_gating(
    cfg: &ExperimentConfig,
    model: &Model,
    out_dir: &Path,
    batch: usize,
) -> Result<GatingCurves> {
    std::fs::create_dir_all(out_dir)?;
    let unet = model.as_unet()?;
    let sched = NoiseSchedule::linear(cfg.schedule.t, cfg.schedule.beta_start, cfg.schedule.beta_end)?;
    let mut rng = stream_rng(cfg.seed, STREAM_SAMPLE);
    let shape = crate::diffusion::Denoiser::data_shape(unet);
    let mut xs: Vec<Tensor> = (0..batch).map(|_| Tensor::randn(&shape, &mut rng)).collect();

    // (t, layer) -> per-band sample lists.
    let mut stats: BTreeMap<(usize, String), [Vec<f64>; 4]> = BTreeMap::new();
    let mut record = |t: usize, per_sample: &[Vec<(String, [f64; 4])>]| {
        for sample_gates in per_sample {
            for (layer, means) in sample_gates {
                let entry = stats
                    .entry((t, layer.clone()))
                    .or_insert_with(|| [vec![], vec![], vec![], vec![]]);
                for (b, m) in means.iter().enumerate() {
                    entry[b].push(*m);
                }
            }
        }
    };

    match cfg.sampler.to_config().kind {
        SamplerKind::Ancestral => {
            for t in (1..=sched.t_max()).rev() {
                let ts = vec![t; batch];
                let (eps_hat, gates) = unet.predict_gates(&xs, &ts, None)?;
                record(t, &gates);
                let mut next = Vec::with_capacity(batch);
                for (x, e) in xs.iter().zip(&eps_hat) {
                    let z = if t > 1 {
                        Tensor::randn(&shape, &mut rng)
                    } else {
                        Tensor::zeros(&shape)
                    };
                    next.push(ancestral_step(x, t, e, &sched, &z)?);
                }
                xs = next;
            }
        }
        SamplerKind::Ddim { n_steps, eta } => {
            for (t, t_prev) in ddim_times(sched.t_max(), n_steps)? {
                let ts = vec![t; batch];
                let (eps_hat, gates) = unet.predict_gates(&xs, &ts, None)?;
                record(t, &gates);
                let mut next = Vec::with_capacity(batch);
                for (x, e) in xs.iter().zip(&eps_hat) {
                    let z = if eta > 0.0 && t_prev > 0 {
                        Some(Tensor::randn(&shape, &mut rng))
                    } else {
                        None
                    };
                    next.push(ddim_step(x, t, t_prev, e, &sched, eta, z.as_ref())?);
                }
                xs = next;
            }
        }
    }

    let mut rows = Vec::new();
    for ((t, layer), bands) in &stats {
        for (b, vals) in bands.iter().enumerate() {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            rows.push((*t, layer.clone(), b, mean, var.sqrt()));
        }
    }
    let mut csv = std::io::BufWriter::new(std::fs::File::create(out_dir.join("gating.csv"))?);
    writeln!(csv, "t,layer,band,mean,std")?;
    for (t, layer, b, mean, std) in &rows {
        writeln!(csv, "{},{},{},{},{}", t, layer, BAND_NAMES[*b], mean, std)?;
    }
    csv.flush()?;
    Ok(GatingCurves { rows })
}

/// Generates a batch and compares its spectrum against the held-out tail of
/// the dataset. Writes `freq_error.csv`.
pub fn run_freq_error(
    cfg: &ExperimentConfig,
    model: &Model,
    out_dir: &Path,
    n_gen: usize,
    n_bins: usize,
) -> Result<crate::analysis::FreqErrorReport> {
    std::fs::create_dir_all(out_dir)?;
    let ds_path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| SdError::Config("freq-error analysis needs a dataset".to_string()))?;
    let ds = load_dataset(ds_path)?;
    let held_out = ds.tail(0.75);
    if held_out.len() < 2 {
        return Err(SdError::Config("held-out split too small".to_string()));
    }
    let sched = NoiseSchedule::linear(cfg.schedule.t, cfg.schedule.beta_start, cfg.schedule.beta_end)?;
    let sampler = cfg.sampler.to_config();
    let mut rng = stream_rng(cfg.seed, STREAM_SAMPLE);
    let out = crate::diffusion::sample(model, &sched, &sampler, n_gen, &mut rng, None, None)?;
    let s = held_out[0].shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let cutoff = scaled_cutoff(h, w);
    let report = freq_error(&held_out, &out.samples, cutoff, n_bins)?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(out_dir.join("freq_error.csv"))?);
    report.write_csv(&mut csv)?;
    csv.flush()?;
    Ok(report)
}

/// Mean-magnitude DFT difference map `| |F_a| - |F_b| |` between two sample
/// dumps; writes a centered CSV grid and a normalized PGM.
pub fn run_dft_diff(gen_a: &Path, gen_b: &Path, out_dir: &Path) -> Result<f64> {
    std::fs::create_dir_all(out_dir)?;
    let load = |p: &Path| -> Result<Vec<Tensor>> {
        let arrays = read_arrays(p)?;
        let a = find(&arrays, "samples")?;
        let n = a.shape[0];
        let row: Vec<usize> = a.shape[1..].to_vec();
        let len: usize = row.iter().product();
        (0..n)
            .map(|i| Tensor::new(row.clone(), a.data[i * len..(i + 1) * len].to_vec()))
            .collect()
    };
    let batch_a = load(gen_a)?;
    let batch_b = load(gen_b)?;
    let (ma, h, w) = batch_mean_magnitudes(&batch_a)?;
    let (mb, hb, wb) = batch_mean_magnitudes(&batch_b)?;
    if (h, w) != (hb, wb) {
        return Err(SdError::ShapeMismatch {
            op: "dft_diff",
            left: vec![h, w],
            right: vec![hb, wb],
        });
    }
    // Centered layout for the dump.
    let mut diff = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let cu = (u + h / 2) % h;
            let cv = (v + w / 2) % w;
            diff[cu * w + cv] = (ma[u * w + v] - mb[u * w + v]).abs();
        }
    }
    let mut csv = std::io::BufWriter::new(std::fs::File::create(out_dir.join("dft_diff.csv"))?);
    writeln!(csv, "u,v,abs_diff")?;
    for u in 0..h {
        for v in 0..w {
            writeln!(csv, "{},{},{}", u as i64 - (h / 2) as i64, v as i64 - (w / 2) as i64, diff[u * w + v])?;
        }
    }
    csv.flush()?;
    let max = diff.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
    write_pgm_scaled(&out_dir.join("dft_diff.pgm"), &diff, h, w, 0.0, max)?;
    write_arrays(
        &out_dir.join("dft_diff.bin"),
        &[NamedArray::new("dft_diff", vec![h, w], diff.clone())?],
    )?;
    let mean = diff.iter().sum::<f64>() / diff.len() as f64;
    Ok(mean)
}

/// Writes a sampled batch: raw arrays, per-sample PGM (2D) and snapshot
/// frames with their index.
pub fn run_sample(
    cfg: &ExperimentConfig,
    model: &Model,
    out_dir: &Path,
    batch: usize,
    n_snapshots: usize,
    cond_id: Option<usize>,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let sched = NoiseSchedule::linear(cfg.schedule.t, cfg.schedule.beta_start, cfg.schedule.beta_end)?;
    let sampler = cfg.sampler.to_config().with_snapshots(n_snapshots);
    let mut rng = stream_rng(cfg.seed, STREAM_SAMPLE);
    let cond: Option<Vec<usize>> = match (&cfg.cfg_guidance, &cfg.model) {
        (Some(_), crate::models::ModelSpec::WgUnet(u)) if u.n_classes.is_some() => Some(
            (0..batch)
                .map(|i| cond_id.unwrap_or(i % u.n_classes.unwrap()))
                .collect(),
        ),
        _ => None,
    };
    let guidance = match (&cfg.cfg_guidance, &cfg.model) {
        (Some(g), crate::models::ModelSpec::WgUnet(u)) if u.n_classes.is_some() => Some(
            crate::diffusion::GuidanceConfig::new(g.w, u.n_classes.unwrap())?,
        ),
        _ => None,
    };
    let out = crate::diffusion::sample(
        model,
        &sched,
        &sampler,
        batch,
        &mut rng,
        cond.as_deref(),
        guidance.as_ref(),
    )?;

    let shape = out.samples[0].shape().to_vec();
    let len: usize = shape.iter().product();
    let mut flat = Vec::with_capacity(batch * len);
    for s in &out.samples {
        flat.extend_from_slice(s.data());
    }
    let mut full_shape = vec![batch];
    full_shape.extend_from_slice(&shape);
    write_arrays(
        &out_dir.join("samples.bin"),
        &[NamedArray::new("samples", full_shape, flat)?],
    )?;
    if shape.len() == 3 {
        for (i, s) in out.samples.iter().enumerate() {
            write_pgm(&out_dir.join(format!("sample_{i:03}.pgm")), s)?;
        }
    }
    let mut index = std::io::BufWriter::new(std::fs::File::create(out_dir.join("snapshots.csv"))?);
    writeln!(index, "step,t,file")?;
    for snap in &out.snapshots {
        let file = format!("snapshot_{:03}.pgm", snap.index);
        if shape.len() == 3 {
            write_pgm(&out_dir.join(&file), &snap.xhat0[0])?;
        } else {
            let n = snap.xhat0[0].shape()[0];
            let mut rows = Vec::with_capacity(snap.xhat0.len() * n);
            for s in &snap.xhat0 {
                rows.extend_from_slice(s.data());
            }
            write_pgm_scaled(&out_dir.join(&file), &rows, snap.xhat0.len(), n, -1.5, 1.5)?;
        }
        writeln!(index, "{},{},{}", snap.index, snap.t, file)?;
    }
    index.flush()?;
    Ok(())
}

/// Loads a `samples.bin` style dump back into tensors.
pub fn load_samples(path: &Path) -> Result<Vec<Tensor>> {
    let arrays = read_arrays(path)?;
    let a = find(&arrays, "samples")?;
    let n = a.shape[0];
    let row: Vec<usize> = a.shape[1..].to_vec();
    let len: usize = row.iter().product();
    (0..n)
        .map(|i| Tensor::new(row.clone(), a.data[i * len..(i + 1) * len].to_vec()))
        .collect()
}

/// Plain freq-error between two sample dumps (the `metrics` subcommand).
pub fn run_metrics(
    real: &Path,
    gen: &Path,
    cutoff: Option<f64>,
    n_bins: usize,
    out_dir: &Path,
) -> Result<crate::analysis::FreqErrorReport> {
    std::fs::create_dir_all(out_dir)?;
    let real_batch = load_batch_any(real)?;
    let gen_batch = load_batch_any(gen)?;
    let s = real_batch[0].shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let cutoff = cutoff.unwrap_or_else(|| scaled_cutoff(h, w));
    let report = freq_error(&real_batch, &gen_batch, cutoff, n_bins)?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(out_dir.join("freq_error.csv"))?);
    report.write_csv(&mut csv)?;
    csv.flush()?;
    Ok(report)
}

/// Accepts either a dataset file or a raw sample dump.
fn load_batch_any(path: &Path) -> Result<Vec<Tensor>> {
    let arrays = read_arrays(path)?;
    let name = if arrays.iter().any(|a| a.name == "samples") {
        "samples"
    } else {
        return Err(SdError::Config(format!(
            "{}: no 'samples' array found",
            path.display()
        )));
    };
    let a = find(&arrays, name)?;
    let n = a.shape[0];
    let row: Vec<usize> = a.shape[1..].to_vec();
    let len: usize = row.iter().product();
    (0..n)
        .map(|i| Tensor::new(row.clone(), a.data[i * len..(i + 1) * len].to_vec()))
        .collect()
}

/// Convenience: checkpoint + config -> model, verifying the config hash.
pub fn load_checkpoint_model(cfg: &ExperimentConfig, path: &Path) -> Result<Model> {
    let (model, ck) = load_model(path)?;
    if ck.config_hash != cfg.canonical_hash() {
        return Err(SdError::Config(
            "checkpoint was produced by a different config (hash mismatch)".to_string(),
        ));
    }
    Ok(model)
}

/// Gate curves must exist and have non-negative spread; used by reports and
/// tests.
pub fn gating_rows_are_sane(curves: &GatingCurves) -> bool {
    !curves.rows.is_empty()
        && curves
            .rows
            .iter()
            .all(|(_, _, _, mean, std)| mean.is_finite() && *std >= 0.0)
}

/// Draws fresh samples from a trained model for ablation comparisons,
/// without touching the filesystem.
pub fn sample_batch<R: Rng>(
    cfg: &ExperimentConfig,
    model: &Model,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<Tensor>> {
    let sched = NoiseSchedule::linear(cfg.schedule.t, cfg.schedule.beta_start, cfg.schedule.beta_end)?;
    let sampler = cfg.sampler.to_config();
    let out = crate::diffusion::sample(model, &sched, &sampler, batch, rng, None, None)?;
    Ok(out.samples)
}
