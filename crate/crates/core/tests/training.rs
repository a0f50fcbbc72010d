//! End-to-end training behaviours on toy configurations.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sdlab::diffusion::{sample, NoiseSchedule, SamplerConfig};
use sdlab::lab::config::*;
use sdlab::lab::dataset::{save_dataset, Dataset};
use sdlab::lab::train::{load_model, stream_rng, train, STREAM_SAMPLE};
use sdlab::models::ModelSpec;
use sdlab::tensor::Tensor;

fn read_losses(path: &std::path::Path) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn loss_decreases_on_the_texture_task() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("data.bin");
    let mut rng = ChaCha12Rng::seed_from_u64(40);
    let ds = sdlab::lab::dataset::gen_data(
        Task::Texture2d,
        &DataSpec {
            n_samples: 64,
            n_points: 64,
            image_hw: 8,
        },
        &mut rng,
    )
    .unwrap();
    save_dataset(&ds, &data_path).unwrap();

    let cfg = ExperimentConfig {
        task: Task::Texture2d,
        model: ModelSpec::WgUnet(sdlab::models::UnetConfig {
            in_channels: 1,
            image_hw: 8,
            widths: vec![4, 8],
            temb_dim: 8,
            n_classes: None,
            plain_resample: false,
        }),
        schedule: ScheduleSpec {
            t: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
        },
        optimizer: OptimizerSpec {
            lr: 2e-3,
            steps: 150,
            batch: 4,
            lr_decay: LrDecay::Linear,
            weight_decay: 0.0,
        },
        distill: None,
        sampler: SamplerSpec::Ddim {
            n_steps: 20,
            eta: 0.0,
        },
        cfg_guidance: None,
        data: DataSpec {
            n_samples: 64,
            n_points: 64,
            image_hw: 8,
        },
        dataset: Some(data_path),
        seed: 5,
        out_dir: None,
        checkpoint_every: None,
    };
    let artifacts = train(&cfg, dir.path(), false, None).unwrap();
    let losses = read_losses(&artifacts.metrics);
    let tenth = losses.len() / 10;
    let first: f64 = losses[..tenth].iter().sum::<f64>() / tenth as f64;
    let last: f64 = losses[losses.len() - tenth..].iter().sum::<f64>() / tenth as f64;
    assert!(
        last < first,
        "training did not reduce the loss: {first} -> {last}"
    );
}

/// A model trained on a single data point must generate near that point.
#[test]
fn delta_dataset_samples_converge_to_the_point() {
    let dir = tempfile::tempdir().unwrap();
    let n = 8usize;
    let point: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.7).sin() * 0.8).collect();
    let ds = Dataset {
        task: Task::Toy1d,
        samples: vec![Tensor::new(vec![n], point.clone()).unwrap()],
        labels: vec![0.0],
    };
    let data_path = dir.path().join("delta.bin");
    save_dataset(&ds, &data_path).unwrap();

    let cfg = ExperimentConfig {
        task: Task::Toy1d,
        model: ModelSpec::Mlp {
            data_dim: n,
            hidden: 128,
            temb_dim: 16,
        },
        schedule: ScheduleSpec {
            t: 100,
            beta_start: 1e-4,
            beta_end: 0.05,
        },
        optimizer: OptimizerSpec {
            lr: 3e-3,
            steps: 2500,
            batch: 16,
            lr_decay: LrDecay::Linear,
            weight_decay: 0.0,
        },
        distill: None,
        sampler: SamplerSpec::Ancestral,
        cfg_guidance: None,
        data: DataSpec {
            n_samples: 1,
            n_points: n,
            image_hw: 8,
        },
        dataset: Some(data_path),
        seed: 9,
        out_dir: None,
        checkpoint_every: None,
    };
    let artifacts = train(&cfg, dir.path(), false, None).unwrap();
    let (model, _) = load_model(&artifacts.checkpoint).unwrap();
    let sched = NoiseSchedule::linear(100, 1e-4, 0.05).unwrap();
    let mut rng = stream_rng(cfg.seed, STREAM_SAMPLE);
    let out = sample(
        &model,
        &sched,
        &SamplerConfig::ancestral(),
        32,
        &mut rng,
        None,
        None,
    )
    .unwrap();
    let mut err = 0.0;
    for s in &out.samples {
        for (v, p) in s.data().iter().zip(&point) {
            err += (v - p).abs();
        }
    }
    err /= (32 * n) as f64;
    assert!(err < 0.1, "mean deviation from the training point: {err}");
}

#[test]
fn class_conditional_training_and_guided_sampling_stay_finite() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("data.bin");
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let ds = sdlab::lab::dataset::gen_data(
        Task::Class2d,
        &DataSpec {
            n_samples: 32,
            n_points: 64,
            image_hw: 8,
        },
        &mut rng,
    )
    .unwrap();
    save_dataset(&ds, &data_path).unwrap();

    let cfg = ExperimentConfig {
        task: Task::Class2d,
        model: ModelSpec::WgUnet(sdlab::models::UnetConfig {
            in_channels: 1,
            image_hw: 8,
            widths: vec![2, 4],
            temb_dim: 4,
            n_classes: Some(2),
            plain_resample: false,
        }),
        schedule: ScheduleSpec {
            t: 50,
            beta_start: 1e-4,
            beta_end: 0.02,
        },
        optimizer: OptimizerSpec {
            lr: 1e-3,
            steps: 30,
            batch: 4,
            lr_decay: LrDecay::Linear,
            weight_decay: 0.0,
        },
        distill: None,
        sampler: SamplerSpec::Ddim {
            n_steps: 10,
            eta: 0.0,
        },
        cfg_guidance: Some(GuidanceSpec { w: 3.0, p_drop: 0.1 }),
        data: DataSpec {
            n_samples: 32,
            n_points: 64,
            image_hw: 8,
        },
        dataset: Some(data_path),
        seed: 3,
        out_dir: None,
        checkpoint_every: None,
    };
    let artifacts = train(&cfg, dir.path(), false, None).unwrap();
    let (model, _) = load_model(&artifacts.checkpoint).unwrap();
    let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
    let guidance = sdlab::diffusion::GuidanceConfig::new(3.0, 2).unwrap();
    let mut rng = stream_rng(cfg.seed, STREAM_SAMPLE);
    let cond = vec![0usize, 1, 0, 1];
    let out = sample(
        &model,
        &sched,
        &SamplerConfig::ddim(10, 0.0),
        4,
        &mut rng,
        Some(&cond),
        Some(&guidance),
    )
    .unwrap();
    for s in &out.samples {
        assert!(s.is_all_finite());
    }
}

#[test]
fn identical_configs_produce_bit_identical_training_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("data.bin");
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let ds = sdlab::lab::dataset::gen_data(
        Task::Texture2d,
        &DataSpec {
            n_samples: 16,
            n_points: 64,
            image_hw: 8,
        },
        &mut rng,
    )
    .unwrap();
    save_dataset(&ds, &data_path).unwrap();

    let cfg = ExperimentConfig {
        task: Task::Texture2d,
        model: ModelSpec::WgUnet(sdlab::models::UnetConfig {
            in_channels: 1,
            image_hw: 8,
            widths: vec![2, 4],
            temb_dim: 4,
            n_classes: None,
            plain_resample: false,
        }),
        schedule: ScheduleSpec {
            t: 50,
            beta_start: 1e-4,
            beta_end: 0.02,
        },
        optimizer: OptimizerSpec {
            lr: 1e-3,
            steps: 12,
            batch: 2,
            lr_decay: LrDecay::Linear,
            weight_decay: 0.0,
        },
        distill: None,
        sampler: SamplerSpec::Ancestral,
        cfg_guidance: None,
        data: DataSpec {
            n_samples: 16,
            n_points: 64,
            image_hw: 8,
        },
        dataset: Some(data_path),
        seed: 4,
        out_dir: None,
        checkpoint_every: None,
    };
    let a = train(&cfg, &dir.path().join("a"), false, None).unwrap();
    let b = train(&cfg, &dir.path().join("b"), false, None).unwrap();
    assert_eq!(
        std::fs::read_to_string(&a.metrics).unwrap(),
        std::fs::read_to_string(&b.metrics).unwrap()
    );
    assert_eq!(
        std::fs::read(&a.checkpoint).unwrap(),
        std::fs::read(&b.checkpoint).unwrap()
    );
}
