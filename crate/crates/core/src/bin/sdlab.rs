//! Experiment CLI.
//!
//! One experiment per invocation; `train --jobs N` fans multiple configs out
//! to child processes. `SDLAB_THREADS` caps both the in-process worker pool
//! and the child-process fan-out. Exit codes: 0 success, 2 config error,
//! 3 numerical divergence.

use clap::{Args, Parser, Subcommand};
use sdlab::error::{Result, SdError};
use sdlab::lab::analyze::{
    gating_rows_are_sane, load_checkpoint_model, run_dft_diff, run_evolution, run_freq_error,
    run_gating, run_metrics, run_sample,
};
use sdlab::lab::config::ExperimentConfig;
use sdlab::lab::dataset::{gen_data, save_dataset};
use sdlab::lab::toy1d::run_toy1d;
use sdlab::lab::train::{stream_rng, train, STREAM_DATA};
use sdlab::lab::wiener::{wiener_report, write_wiener_csv, DEFAULT_ALPHA_BARS};
use sdlab::spectral::powerlaw::PowerLawSpectrum;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "sdlab", about = "Desk-scale diffusion laboratory", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's out_dir or ./run).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset file for the configured task.
    GenData(CommonOpts),
    /// Train a model (plain DDPM, or distillation when the config has a
    /// distill section).
    Train {
        /// One or more configs; more than one runs as child processes.
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Parallel child processes for multi-config runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Continue from the checkpoint in the output directory.
        #[arg(long, default_value_t = false)]
        resume: bool,
        /// Stop after this many steps (interruption simulation).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Train with a required distillation section.
    Distill(CommonOpts),
    /// Run the 1D cosine-mixture experiment end to end.
    Toy1d(CommonOpts),
    /// Sample a batch from a checkpoint.
    Sample {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        snapshots: usize,
        /// Fixed class id for conditional models.
        #[arg(long)]
        cond: Option<usize>,
    },
    /// Post-training analyses.
    Analyze {
        /// evolution | gating | freq-error | dft-diff
        #[arg(long)]
        analysis: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        snapshots: usize,
        #[arg(long, default_value_t = 12)]
        bins: usize,
        /// First sample dump for dft-diff.
        #[arg(long)]
        gen_a: Option<PathBuf>,
        /// Second sample dump for dft-diff.
        #[arg(long)]
        gen_b: Option<PathBuf>,
    },
    /// Closed-form optimal-filter tables, optionally with the
    /// least-squares oracle columns.
    WienerReport {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated alpha-bar values.
        #[arg(long)]
        alpha_bars: Option<String>,
        #[arg(long, default_value_t = 32)]
        hw: usize,
        #[arg(long, default_value_t = 16)]
        bins: usize,
        /// Monte-Carlo sample count for the oracle columns (0 = closed
        /// form only).
        #[arg(long, default_value_t = 0)]
        oracle_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Power-law amplitude and exponent of the signal model.
        #[arg(long, default_value_t = 1.0)]
        amplitude: f64,
        #[arg(long, default_value_t = 2.0)]
        exponent: f64,
    },
    /// Low/high-frequency error between two sample files.
    Metrics {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        cutoff: Option<f64>,
        #[arg(long, default_value_t = 12)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn thread_cap() -> Option<usize> {
    std::env::var("SDLAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig, out: &Option<PathBuf>) -> PathBuf {
    out.clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("run"))
}

fn cmd_gen_data(opts: &CommonOpts) -> Result<()> {
    let cfg = load_config(&opts.config, opts.seed)?;
    let dir = out_dir(&cfg, &opts.out);
    std::fs::create_dir_all(&dir)?;
    let path = cfg
        .dataset
        .clone()
        .unwrap_or_else(|| dir.join("data.bin"));
    let mut rng = stream_rng(cfg.seed, STREAM_DATA);
    let ds = gen_data(cfg.task, &cfg.data, &mut rng)?;
    save_dataset(&ds, &path)?;
    println!("wrote {} samples to {}", ds.len(), path.display());
    Ok(())
}

fn cmd_train_single(
    config: &Path,
    seed: Option<u64>,
    out: &Option<PathBuf>,
    resume: bool,
    stop_after: Option<usize>,
    require_distill: bool,
) -> Result<()> {
    let cfg = load_config(config, seed)?;
    if require_distill && cfg.distill.is_none() {
        return Err(SdError::Config(
            "distill subcommand needs a config with a distill section".to_string(),
        ));
    }
    let dir = out_dir(&cfg, out);
    let artifacts = train(&cfg, &dir, resume, stop_after)?;
    println!(
        "trained {} steps; final loss {}; checkpoint {}",
        artifacts.steps_run,
        artifacts.final_loss,
        artifacts.checkpoint.display()
    );
    Ok(())
}

fn cmd_train_multi(
    configs: &[PathBuf],
    seed: Option<u64>,
    out: &Option<PathBuf>,
    jobs: usize,
    resume: bool,
    stop_after: Option<usize>,
) -> Result<()> {
    if configs.len() == 1 {
        return cmd_train_single(&configs[0], seed, out, resume, stop_after, false);
    }
    let jobs = jobs
        .max(1)
        .min(thread_cap().unwrap_or(usize::MAX))
        .min(configs.len());
    let exe = std::env::current_exe()?;
    let base = out.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let mut pending: Vec<std::process::Child> = Vec::new();
    let mut failures = 0;
    for cfg_path in configs {
        while pending.len() >= jobs {
            let mut child = pending.remove(0);
            if !child.wait()?.success() {
                failures += 1;
            }
        }
        let stem = cfg_path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "run".to_string());
        let mut cmd = std::process::Command::new(&exe);
        cmd.arg("train")
            .arg("--config")
            .arg(cfg_path)
            .arg("--out")
            .arg(base.join(stem));
        if let Some(s) = seed {
            cmd.arg("--seed").arg(s.to_string());
        }
        if resume {
            cmd.arg("--resume");
        }
        if let Some(k) = stop_after {
            cmd.arg("--stop-after").arg(k.to_string());
        }
        pending.push(cmd.spawn()?);
    }
    for mut child in pending {
        if !child.wait()?.success() {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(SdError::Config(format!("{failures} child runs failed")));
    }
    Ok(())
}

fn cmd_sample(
    common: &CommonOpts,
    checkpoint: &Path,
    n: usize,
    snapshots: usize,
    cond: Option<usize>,
) -> Result<()> {
    let cfg = load_config(&common.config, common.seed)?;
    let dir = out_dir(&cfg, &common.out);
    let model = load_checkpoint_model(&cfg, checkpoint)?;
    run_sample(&cfg, &model, &dir, n, snapshots, cond)?;
    println!("wrote {n} samples to {}", dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_analyze(
    analysis: &str,
    config: &Option<PathBuf>,
    checkpoint: &Option<PathBuf>,
    seed: Option<u64>,
    out: &Option<PathBuf>,
    n: usize,
    snapshots: usize,
    bins: usize,
    gen_a: &Option<PathBuf>,
    gen_b: &Option<PathBuf>,
) -> Result<()> {
    if analysis == "dft-diff" {
        let (a, b) = match (gen_a, gen_b) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(SdError::Config(
                    "dft-diff needs --gen-a and --gen-b".to_string(),
                ))
            }
        };
        let dir = out.clone().unwrap_or_else(|| PathBuf::from("run"));
        let mean = run_dft_diff(a, b, &dir)?;
        println!("mean |dft| difference: {mean}");
        return Ok(());
    }
    let cfg_path = config
        .as_ref()
        .ok_or_else(|| SdError::Config(format!("{analysis} needs --config")))?;
    let ck_path = checkpoint
        .as_ref()
        .ok_or_else(|| SdError::Config(format!("{analysis} needs --checkpoint")))?;
    let cfg = load_config(cfg_path, seed)?;
    let dir = out_dir(&cfg, out);
    let model = load_checkpoint_model(&cfg, ck_path)?;
    match analysis {
        "evolution" => {
            let report = run_evolution(&cfg, &model, &dir, n, snapshots, bins)?;
            let (low, high) = report.quartile_reach(0.9)?;
            println!(
                "low-quartile bins reach 90% of final at snapshot {low}, \
                 high-quartile at {high}"
            );
        }
        "gating" => {
            let curves = run_gating(&cfg, &model, &dir, n)?;
            if !gating_rows_are_sane(&curves) {
                return Err(SdError::InvalidArgument(
                    "gating curves contain non-finite values".to_string(),
                ));
            }
            println!("wrote {} gating rows", curves.rows.len());
        }
        "freq-error" => {
            let report = run_freq_error(&cfg, &model, &dir, n, bins)?;
            println!(
                "low_error {} high_error {} (cutoff {})",
                report.low_error, report.high_error, report.cutoff
            );
        }
        other => {
            return Err(SdError::Config(format!(
                "unknown analysis '{other}' (expected evolution|gating|freq-error|dft-diff)"
            )))
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_wiener(
    out: &Option<PathBuf>,
    alpha_bars: &Option<String>,
    hw: usize,
    bins: usize,
    oracle_samples: usize,
    seed: u64,
    amplitude: f64,
    exponent: f64,
) -> Result<()> {
    let abs: Vec<f64> = match alpha_bars {
        Some(text) => text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| SdError::Config(format!("bad alpha-bar value '{s}'")))
            })
            .collect::<Result<_>>()?,
        None => DEFAULT_ALPHA_BARS.to_vec(),
    };
    if abs.is_empty() {
        return Err(SdError::Config("alpha-bar list is empty".to_string()));
    }
    let ps = PowerLawSpectrum::new(amplitude, exponent)?;
    let mut rng = stream_rng(seed, 0);
    let rows = wiener_report(&ps, &abs, hw, bins, oracle_samples, &mut rng)?;
    let dir = out.clone().unwrap_or_else(|| PathBuf::from("run"));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("wiener.csv");
    write_wiener_csv(&rows, &path)?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::GenData(opts) => cmd_gen_data(opts),
        Command::Train {
            config,
            seed,
            out,
            jobs,
            resume,
            stop_after,
        } => cmd_train_multi(config, *seed, out, *jobs, *resume, *stop_after),
        Command::Distill(opts) => {
            cmd_train_single(&opts.config, opts.seed, &opts.out, false, None, true)
        }
        Command::Toy1d(opts) => {
            let cfg = load_config(&opts.config, opts.seed)?;
            let dir = out_dir(&cfg, &opts.out);
            let (_, report) = run_toy1d(&cfg, &dir)?;
            println!(
                "peaks at bins {} and {}; minority fidelity {:.4}, majority {:.4}",
                report.peak_bins.0,
                report.peak_bins.1,
                report.fidelity_minority,
                report.fidelity_majority
            );
            Ok(())
        }
        Command::Sample {
            common,
            checkpoint,
            n,
            snapshots,
            cond,
        } => cmd_sample(common, checkpoint, *n, *snapshots, *cond),
        Command::Analyze {
            analysis,
            config,
            checkpoint,
            seed,
            out,
            n,
            snapshots,
            bins,
            gen_a,
            gen_b,
        } => cmd_analyze(
            analysis, config, checkpoint, *seed, out, *n, *snapshots, *bins, gen_a, gen_b,
        ),
        Command::WienerReport {
            out,
            alpha_bars,
            hw,
            bins,
            oracle_samples,
            seed,
            amplitude,
            exponent,
        } => cmd_wiener(
            out,
            alpha_bars,
            *hw,
            *bins,
            *oracle_samples,
            *seed,
            *amplitude,
            *exponent,
        ),
        Command::Metrics {
            real,
            gen,
            cutoff,
            bins,
            out,
        } => {
            let dir = out.clone().unwrap_or_else(|| PathBuf::from("run"));
            let report = run_metrics(real, gen, *cutoff, *bins, &dir)?;
            println!(
                "cutoff {} low_error {} high_error {}",
                report.cutoff, report.low_error, report.high_error
            );
            Ok(())
        }
    }
}

fn main() {
    if let Some(n) = thread_cap() {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
