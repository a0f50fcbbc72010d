//! Training driver: plain DDPM runs and teacher-student distillation runs,
//! with deterministic rng streams, periodic checkpointing, and exact resume.
//!
//! RNG streams derived from the config seed: 0 = parameter init,
//! 1 = training draws, 2 = sampling, 3 = dataset synthesis. A checkpoint
//! stores the training stream's word position, so a resumed run draws the
//! same batches the uninterrupted run would have drawn.

use crate::diffusion::{forward_diffuse, NoiseSchedule};
use crate::distill::{distill_backward, AdapterSet, DistillConfig};
use crate::error::{Result, SdError};
use crate::lab::checkpoint::{Checkpoint, OptState, RngState};
use crate::lab::config::{ExperimentConfig, Task};
use crate::lab::dataset::{load_dataset, Dataset};
use crate::models::{Model, ModelSpec};
use crate::optim::{AdamW, AdamWConfig};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const STREAM_INIT: u64 = 0;
pub const STREAM_TRAIN: u64 = 1;
pub const STREAM_SAMPLE: u64 = 2;
pub const STREAM_DATA: u64 = 3;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub steps_run: usize,
    pub final_loss: f64,
}

pub struct TrainedState {
    pub model: Model,
    pub adapters: Option<AdapterSet>,
    pub step: u64,
}

fn schedule_of(cfg: &ExperimentConfig) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(cfg.schedule.t, cfg.schedule.beta_start, cfg.schedule.beta_end)
}

/// Loads a frozen model from a checkpoint file.
pub fn load_model(path: &Path) -> Result<(Model, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let mut model = ck.spec.build(&mut rng)?;
    {
        let named: Vec<String> = model.named_params().iter().map(|(n, _)| n.clone()).collect();
        let model_param_count = named.len();
        let ck_model_params = ck
            .params
            .iter()
            .filter(|(n, _)| !n.starts_with("adapter."))
            .count();
        if ck_model_params != model_param_count {
            return Err(SdError::Checkpoint(format!(
                "checkpoint has {ck_model_params} model params, spec implies {model_param_count}"
            )));
        }
        let mut params = model.params_mut();
        for ((name, p), (ck_name, ck_t)) in named.iter().zip(params.iter_mut()).map(|(n, p)| (n, p)).zip(
            ck.params.iter().filter(|(n, _)| !n.starts_with("adapter.")),
        ) {
            if name != ck_name {
                return Err(SdError::Checkpoint(format!(
                    "parameter order mismatch: {name} vs {ck_name}"
                )));
            }
            if p.shape() != ck_t.shape() {
                return Err(SdError::Checkpoint(format!(
                    "parameter {name}: shape {:?} vs {:?}",
                    p.shape(),
                    ck_t.shape()
                )));
            }
            p.data_mut().copy_from_slice(ck_t.data());
        }
    }
    model.validate_finite()?;
    Ok((model, ck))
}

fn dataset_for(cfg: &ExperimentConfig) -> Result<Dataset> {
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| SdError::Config("config has no dataset path; run gen-data first".to_string()))?;
    let ds = load_dataset(path)
        .map_err(|e| SdError::Config(format!("dataset {}: {e}", path.display())))?;
    if ds.task != cfg.task {
        return Err(SdError::Config(format!(
            "dataset task {:?} does not match config task {:?}",
            ds.task, cfg.task
        )));
    }
    let expected_shape: Vec<usize> = match &cfg.model {
        ModelSpec::Mlp { data_dim, .. } => vec![*data_dim],
        ModelSpec::WgUnet(u) => vec![u.in_channels, u.image_hw, u.image_hw],
    };
    if ds.samples[0].shape() != expected_shape.as_slice() {
        return Err(SdError::Config(format!(
            "dataset rows {:?} do not match model input {:?}",
            ds.samples[0].shape(),
            expected_shape
        )));
    }
    Ok(ds)
}

struct DistillState {
    teacher: Model,
    cfg: DistillConfig,
}

fn metrics_header(distilling: bool) -> &'static str {
    if distilling {
        "step,l_ddpm,l_spatial,l_freq,total"
    } else {
        "step,loss"
    }
}

/// Runs (or resumes) a training loop. `stop_after` limits how many steps
/// this invocation executes, simulating an interruption; the checkpoint is
/// always written at the stopping point.
pub fn train(cfg: &ExperimentConfig, out_dir: &Path, resume: bool, stop_after: Option<usize>) -> Result<TrainArtifacts> {
    cfg.validate().map_err(|e| e)?;
    std::fs::create_dir_all(out_dir)?;
    let ds = dataset_for(cfg)?;
    let sched = schedule_of(cfg)?;
    let config_hash = cfg.canonical_hash();
    let ck_path = out_dir.join("checkpoint.bin");
    let metrics_path = out_dir.join("metrics.csv");

    let distill_spec = cfg.distill.clone();
    let mut teacher_state: Option<DistillState> = None;
    if let Some(d) = &distill_spec {
        let (teacher, _) = load_model(&d.teacher_checkpoint)?;
        teacher.as_unet()?;
        teacher_state = Some(DistillState {
            teacher,
            cfg: DistillConfig {
                lambda_s: d.lambda_s,
                lambda_f: d.lambda_f,
                alpha_w: d.alpha_w,
                eps_w: d.eps_w,
            },
        });
    }

    // Fresh init always happens (resume overwrites), so the init stream is
    // consumed identically in both paths.
    let mut init_rng = stream_rng(cfg.seed, STREAM_INIT);
    let mut model = cfg.model.build(&mut init_rng)?;
    let mut adapters = match (&teacher_state, &model) {
        (Some(ts), Model::Unet(student)) => Some(AdapterSet::for_pair(
            ts.teacher.as_unet()?,
            student,
            &mut init_rng,
        )?),
        _ => None,
    };

    let mut train_rng = stream_rng(cfg.seed, STREAM_TRAIN);
    let param_sizes: Vec<usize> = model
        .named_params()
        .iter()
        .map(|(_, t)| t.numel())
        .chain(
            adapters
                .iter()
                .flat_map(|a| a.named_params().into_iter().map(|(_, t)| t.numel())),
        )
        .collect();
    let mut opt = AdamW::new(
        &param_sizes,
        AdamWConfig {
            weight_decay: cfg.optimizer.weight_decay,
            ..AdamWConfig::default()
        },
    );

    let mut start_step: usize = 0;
    if resume {
        let ck = Checkpoint::load(&ck_path)?;
        if ck.config_hash != config_hash {
            return Err(SdError::Config(
                "checkpoint was produced by a different config (hash mismatch)".to_string(),
            ));
        }
        let model_names: Vec<String> =
            model.named_params().iter().map(|(n, _)| n.clone()).collect();
        let adapter_names: Vec<String> = adapters
            .as_ref()
            .map(|a| a.named_params().iter().map(|(n, _)| n.clone()).collect())
            .unwrap_or_default();
        let mut targets: Vec<(&str, &mut Tensor)> = Vec::new();
        let mut model_params = model.params_mut();
        for (n, p) in model_names.iter().zip(model_params.iter_mut()) {
            targets.push((n.as_str(), p));
        }
        let mut adapter_params = adapters.as_mut().map(|a| a.params_mut()).unwrap_or_default();
        for (n, p) in adapter_names.iter().zip(adapter_params.iter_mut()) {
            targets.push((n.as_str(), p));
        }
        ck.load_into(&mut targets)?;
        drop(targets);
        let opt_state = ck
            .opt
            .as_ref()
            .ok_or_else(|| SdError::Checkpoint("checkpoint lacks optimizer state".to_string()))?;
        opt.restore(opt_state.t, opt_state.m.clone(), opt_state.v.clone())?;
        train_rng = ck.rng.restore();
        start_step = ck.step as usize;
    }

    let total_steps = cfg.optimizer.steps;
    if start_step > total_steps {
        return Err(SdError::Config(format!(
            "checkpoint step {start_step} beyond configured steps {total_steps}"
        )));
    }
    let end_step = match stop_after {
        Some(k) => (start_step + k).min(total_steps),
        None => total_steps,
    };

    let metrics_file = if resume {
        OpenOptions::new().append(true).open(&metrics_path)?
    } else {
        let f = std::fs::File::create(&metrics_path)?;
        f
    };
    let mut metrics = BufWriter::new(metrics_file);
    if !resume {
        writeln!(metrics, "{}", metrics_header(distill_spec.is_some()))?;
    }

    let data_shape = ds.samples[0].shape().to_vec();
    let n_data = ds.len();
    let mut final_loss = f64::NAN;

    for step in start_step..end_step {
        // Draw order is fixed: indices, steps, noise, conditioning dropout.
        let idx: Vec<usize> = (0..cfg.optimizer.batch)
            .map(|_| train_rng.random_range(0..n_data))
            .collect();
        let ts: Vec<usize> = (0..cfg.optimizer.batch)
            .map(|_| train_rng.random_range(1..=sched.t_max()))
            .collect();
        let eps: Vec<Tensor> = (0..cfg.optimizer.batch)
            .map(|_| Tensor::randn(&data_shape, &mut train_rng))
            .collect();
        let cond: Option<Vec<usize>> = if cfg.task == Task::Class2d {
            let p_drop = cfg.cfg_guidance.map(|g| g.p_drop).unwrap_or(0.0);
            let uncond = match &cfg.model {
                ModelSpec::WgUnet(u) => u.n_classes.unwrap_or(0),
                _ => 0,
            };
            Some(
                idx.iter()
                    .map(|&i| {
                        let class = ds.labels[i] as usize;
                        if p_drop > 0.0 && train_rng.random::<f64>() < p_drop {
                            uncond
                        } else {
                            class
                        }
                    })
                    .collect(),
            )
        } else {
            None
        };

        let x0: Vec<Tensor> = idx.iter().map(|&i| ds.samples[i].clone()).collect();
        let x_t: Vec<Tensor> = x0
            .iter()
            .zip(&ts)
            .zip(&eps)
            .map(|((x, &t), e)| forward_diffuse(x, t, e, &sched))
            .collect::<Result<_>>()?;

        model.zero_grads();
        if let Some(a) = adapters.as_mut() {
            a.zero_grads();
        }

        let line = match (&teacher_state, adapters.as_mut()) {
            (Some(tstate), Some(adapt)) => {
                let losses = distill_backward(
                    tstate.teacher.as_unet()?,
                    model.as_unet_mut()?,
                    adapt,
                    &x0,
                    &x_t,
                    &ts,
                    &eps,
                    cond.as_deref(),
                    &tstate.cfg,
                )?;
                final_loss = losses.total;
                if !losses.total.is_finite() {
                    return Err(SdError::NumericalDivergence { step: step as u64 });
                }
                format!(
                    "{},{},{},{},{}",
                    step, losses.l_ddpm, losses.l_spatial, losses.l_freq, losses.total
                )
            }
            _ => {
                let loss = model.ddpm_backward(&x_t, &ts, &eps, cond.as_deref())?;
                final_loss = loss;
                if !loss.is_finite() {
                    return Err(SdError::NumericalDivergence { step: step as u64 });
                }
                format!("{step},{loss}")
            }
        };

        let lr = cfg.optimizer.lr_at(step);
        {
            let mut params = model.params_mut();
            let mut adapter_params =
                adapters.as_mut().map(|a| a.params_mut()).unwrap_or_default();
            let mut all: Vec<&mut Tensor> = Vec::with_capacity(param_sizes.len());
            all.append(&mut params);
            all.append(&mut adapter_params);
            opt.step(&mut all, lr)?;
        }
        if model.validate_finite().is_err() {
            return Err(SdError::NumericalDivergence { step: step as u64 });
        }
        writeln!(metrics, "{line}")?;

        let completed = step + 1;
        let at_checkpoint = cfg
            .checkpoint_every
            .map(|k| k > 0 && completed % k == 0)
            .unwrap_or(false);
        if at_checkpoint || completed == end_step {
            metrics.flush()?;
            save_checkpoint(
                cfg,
                &config_hash,
                &model,
                adapters.as_ref(),
                &opt,
                &train_rng,
                completed as u64,
                &ck_path,
            )?;
        }
    }
    metrics.flush()?;

    Ok(TrainArtifacts {
        checkpoint: ck_path,
        metrics: metrics_path,
        steps_run: end_step - start_step,
        final_loss,
    })
}

#[allow(clippy::too_many_arguments)]
fn save_checkpoint(
    cfg: &ExperimentConfig,
    config_hash: &str,
    model: &Model,
    adapters: Option<&AdapterSet>,
    opt: &AdamW,
    train_rng: &ChaCha12Rng,
    step: u64,
    path: &Path,
) -> Result<()> {
    let mut params: Vec<(String, Tensor)> = model
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    if let Some(a) = adapters {
        params.extend(a.named_params().into_iter().map(|(n, t)| (n.clone(), t.clone())));
    }
    let ck = Checkpoint {
        spec: cfg.model.clone(),
        config_hash: config_hash.to_string(),
        step,
        rng: RngState::capture(train_rng),
        params,
        opt: Some(OptState::capture(opt)),
    };
    ck.save(path)
}

/// Loads the trained model and any adapters back from a run directory.
pub fn load_run(out_dir: &Path) -> Result<TrainedState> {
    let (model, ck) = load_model(&out_dir.join("checkpoint.bin"))?;
    Ok(TrainedState {
        model,
        adapters: None,
        step: ck.step,
    })
}
