//! Experiment configuration: JSON with a strict schema (unknown keys are
//! rejected) and a canonical hash that ties checkpoints to the config that
//! produced them.

use crate::error::{Result, SdError};
use crate::models::ModelSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Toy1d,
    Texture2d,
    Class2d,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub t: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            t: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrDecay {
    None,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    #[serde(default = "default_lr_decay")]
    pub lr_decay: LrDecay,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_lr_decay() -> LrDecay {
    LrDecay::Linear
}

impl OptimizerSpec {
    /// Linear decay runs from the initial rate down to (almost) zero.
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.lr_decay {
            LrDecay::None => self.lr,
            LrDecay::Linear => self.lr * (1.0 - step as f64 / self.steps.max(1) as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSpec {
    #[serde(default = "default_lambda")]
    pub lambda_s: f64,
    #[serde(default = "default_lambda")]
    pub lambda_f: f64,
    #[serde(default = "default_alpha_w")]
    pub alpha_w: f64,
    #[serde(default = "default_eps_w")]
    pub eps_w: f64,
    pub teacher_checkpoint: PathBuf,
}

fn default_lambda() -> f64 {
    0.1
}
fn default_alpha_w() -> f64 {
    -1.0
}
fn default_eps_w() -> f64 {
    1e-3
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum SamplerSpec {
    Ancestral,
    Ddim {
        n_steps: usize,
        #[serde(default)]
        eta: f64,
    },
}

impl SamplerSpec {
    pub fn to_config(self) -> crate::diffusion::SamplerConfig {
        match self {
            SamplerSpec::Ancestral => crate::diffusion::SamplerConfig::ancestral(),
            SamplerSpec::Ddim { n_steps, eta } => {
                crate::diffusion::SamplerConfig::ddim(n_steps, eta)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceSpec {
    pub w: f64,
    #[serde(default = "default_p_drop")]
    pub p_drop: f64,
}

fn default_p_drop() -> f64 {
    0.1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub n_samples: usize,
    /// Signal length for 1D tasks.
    #[serde(default = "default_n_points")]
    pub n_points: usize,
    /// Square image size for 2D tasks.
    #[serde(default = "default_image_hw")]
    pub image_hw: usize,
}

fn default_n_points() -> usize {
    64
}
fn default_image_hw() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub model: ModelSpec,
    pub schedule: ScheduleSpec,
    pub optimizer: OptimizerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distill: Option<DistillSpec>,
    pub sampler: SamplerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cfg_guidance: Option<GuidanceSpec>,
    pub data: DataSpec,
    /// Dataset file; `train` requires it to exist, `gen-data` creates it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SdError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| SdError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.optimizer.steps == 0 || self.optimizer.batch == 0 {
            return Err(SdError::Config(
                "optimizer.steps and optimizer.batch must be positive".to_string(),
            ));
        }
        if self.data.n_samples == 0 {
            return Err(SdError::Config("data.n_samples must be positive".to_string()));
        }
        match (self.task, &self.model) {
            (Task::Toy1d, ModelSpec::Mlp { data_dim, .. }) => {
                if *data_dim != self.data.n_points {
                    return Err(SdError::Config(format!(
                        "mlp data_dim {} must equal data.n_points {}",
                        data_dim, self.data.n_points
                    )));
                }
            }
            (Task::Toy1d, _) => {
                return Err(SdError::Config("toy1d needs an mlp model".to_string()));
            }
            (_, ModelSpec::WgUnet(u)) => {
                if u.image_hw != self.data.image_hw {
                    return Err(SdError::Config(format!(
                        "unet image_hw {} must equal data.image_hw {}",
                        u.image_hw, self.data.image_hw
                    )));
                }
                if self.task == Task::Class2d && u.n_classes != Some(2) {
                    return Err(SdError::Config(
                        "class2d needs a unet with n_classes = 2".to_string(),
                    ));
                }
            }
            (_, ModelSpec::Mlp { .. }) => {
                return Err(SdError::Config("2d tasks need a unet model".to_string()));
            }
        }
        if let Some(d) = &self.distill {
            if d.alpha_w >= 0.0 || d.eps_w <= 0.0 || d.lambda_s < 0.0 || d.lambda_f < 0.0 {
                return Err(SdError::Config(
                    "distill spec: need alpha_w < 0, eps_w > 0, lambdas >= 0".to_string(),
                ));
            }
        }
        if let Some(g) = &self.cfg_guidance {
            if g.w < 0.0 || !(0.0..=1.0).contains(&g.p_drop) {
                return Err(SdError::Config(
                    "cfg_guidance: need w >= 0 and p_drop in [0, 1]".to_string(),
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical (sorted-key) JSON encoding.
    pub fn canonical_hash(&self) -> String {
        let value: serde_json::Value =
            serde_json::to_value(self).expect("config converts to json value");
        // serde_json maps use BTreeMap: key order is already canonical.
        let canon = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::unet::UnetConfig;

    fn sample_config() -> ExperimentConfig {
        ExperimentConfig {
            task: Task::Texture2d,
            model: ModelSpec::WgUnet(UnetConfig {
                in_channels: 1,
                image_hw: 16,
                widths: vec![4, 8],
                temb_dim: 8,
                n_classes: None,
                plain_resample: false,
            }),
            schedule: ScheduleSpec::default(),
            optimizer: OptimizerSpec {
                lr: 1e-3,
                steps: 100,
                batch: 4,
                lr_decay: LrDecay::Linear,
                weight_decay: 0.0,
            },
            distill: None,
            sampler: SamplerSpec::Ddim {
                n_steps: 10,
                eta: 0.0,
            },
            cfg_guidance: None,
            data: DataSpec {
                n_samples: 64,
                n_points: 64,
                image_hw: 16,
            },
            dataset: None,
            seed: 7,
            out_dir: None,
            checkpoint_every: None,
        }
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let cfg = sample_config();
        let text = cfg.to_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.canonical_hash(), back.canonical_hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&sample_config().to_json()).unwrap();
        v.as_object_mut()
            .unwrap()
            .insert("lr_deacy".to_string(), serde_json::json!(0.1));
        let err = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("lr_deacy"), "{err}");

        // Nested typo too.
        let mut v: serde_json::Value = serde_json::from_str(&sample_config().to_json()).unwrap();
        v["optimizer"]
            .as_object_mut()
            .unwrap()
            .insert("betas".to_string(), serde_json::json!([0.9, 0.999]));
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn task_model_mismatch_is_a_config_error() {
        let mut cfg = sample_config();
        cfg.task = Task::Toy1d;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_changes_with_content() {
        let a = sample_config();
        let mut b = sample_config();
        b.seed = 8;
        assert_ne!(a.canonical_hash(), b.canonical_hash());
    }

    #[test]
    fn linear_decay_hits_zero_at_the_horizon() {
        let o = OptimizerSpec {
            lr: 1.0,
            steps: 10,
            batch: 1,
            lr_decay: LrDecay::Linear,
            weight_decay: 0.0,
        };
        assert_eq!(o.lr_at(0), 1.0);
        assert!((o.lr_at(5) - 0.5).abs() < 1e-15);
        assert!((o.lr_at(10) - 0.0).abs() < 1e-15);
    }
}
