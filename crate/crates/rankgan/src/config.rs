//! Declarative experiment configuration.
//!
//! A run is a single JSON file with a fixed schema; unknown keys are
//! rejected so hyperparameter typos fail loudly. Every field has a default,
//! and the fully materialized configuration is written back as
//! `config.resolved` before anything else happens.
//!
//! All randomness flows from `seed` through named sub-seeds (`data`, `init`,
//! `training`, `completion`, plus internal `eval` and `metrics` streams), so
//! changing one stream leaves the others untouched. Any named sub-seed can be
//! pinned explicitly.

use crate::completion::CompletionConfig;
use crate::data::{DatasetKind, MaskKind};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::stagewise::{
    Architecture, EncoderMode, PipelineLoss, StreamSeeds, TrainSchedule, TrainingHyper,
};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Pipeline,
    Fig2Scores,
    Completion,
    MetricsOnly,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub n_samples: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Ring8,
            n_samples: 1280,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Defaults to 8 for image data, 2 for point clouds.
    pub latent_dim: Option<usize>,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub enc_hidden: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            latent_dim: None,
            gen_hidden: vec![64, 64],
            disc_hidden: vec![64, 64],
            enc_hidden: vec![64],
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub lr_disc: f64,
    pub lr_gen: f64,
    pub lr_enc: f64,
    pub vae_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Train stage one adversarially before any ranked stage.
    pub stage1_adversarial: bool,
    /// Epoch budget for the score-curve experiment's critics.
    pub fig2_epochs: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let hyper = TrainingHyper::default();
        TrainingConfig {
            batch_size: hyper.batch_size,
            lr_disc: hyper.lr_disc,
            lr_gen: hyper.lr_gen,
            lr_enc: hyper.lr_enc,
            vae_epochs: hyper.vae_epochs,
            adam_beta1: hyper.adam_beta1,
            adam_beta2: hyper.adam_beta2,
            stage1_adversarial: true,
            fig2_epochs: 300,
        }
    }
}

impl TrainingConfig {
    pub fn hyper(&self) -> TrainingHyper {
        TrainingHyper {
            batch_size: self.batch_size,
            lr_disc: self.lr_disc,
            lr_gen: self.lr_gen,
            lr_enc: self.lr_enc,
            vae_epochs: self.vae_epochs,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletionSection {
    #[serde(flatten)]
    pub config: CompletionConfig,
    /// Which stage's generator/critic pair completes the images.
    pub stage: usize,
    pub mask: MaskKind,
    pub n_images: usize,
    /// Where `stage_<i>_{G,D}.ckpt` and `encoder.ckpt` live; defaults to the
    /// output directory itself (a completed pipeline run).
    pub checkpoints_dir: Option<PathBuf>,
}

impl Default for CompletionSection {
    fn default() -> Self {
        CompletionSection {
            config: CompletionConfig::default(),
            stage: 3,
            mask: MaskKind::CenterLarge,
            n_images: 50,
            checkpoints_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub samples: usize,
    pub projections: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            samples: 256,
            projections: 128,
        }
    }
}

/// Explicit overrides for the named random streams.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedOverrides {
    pub data: Option<u64>,
    pub init: Option<u64>,
    pub training: Option<u64>,
    pub completion: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default = "default_nstages")]
    pub nstages: usize,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default = "default_loss")]
    pub loss: PipelineLoss,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub completion: CompletionSection,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seeds: SeedOverrides,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_encoder_mode")]
    pub encoder_mode: EncoderMode,
    #[serde(default)]
    pub export_dataset: bool,
}

fn default_nstages() -> usize {
    3
}

fn default_loss() -> PipelineLoss {
    PipelineLoss::Rankgan
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_encoder_mode() -> EncoderMode {
    EncoderMode::SampleAware
}

/// Derives a stream seed from the master seed and the stream name.
pub fn stream_seed(master: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// All stream seeds, materialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ResolvedSeeds {
    pub master: u64,
    pub data: u64,
    pub init: u64,
    pub training: u64,
    pub eval: u64,
    pub metrics: u64,
    pub completion: u64,
}

impl ResolvedSeeds {
    fn resolve(master: u64, overrides: &SeedOverrides) -> ResolvedSeeds {
        ResolvedSeeds {
            master,
            data: overrides.data.unwrap_or_else(|| stream_seed(master, "data")),
            init: overrides.init.unwrap_or_else(|| stream_seed(master, "init")),
            training: overrides
                .training
                .unwrap_or_else(|| stream_seed(master, "training")),
            eval: stream_seed(master, "eval"),
            metrics: stream_seed(master, "metrics"),
            completion: overrides
                .completion
                .unwrap_or_else(|| stream_seed(master, "completion")),
        }
    }

    pub fn stream_seeds(&self) -> StreamSeeds {
        StreamSeeds {
            init: self.init,
            training: self.training,
            eval: self.eval,
            metrics: self.metrics,
        }
    }
}

/// A validated configuration with every default and derived value filled in.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ResolvedConfig {
    #[serde(flatten)]
    pub raw: ExperimentConfig,
    pub resolved_seeds: ResolvedSeeds,
    pub latent_dim: usize,
    pub checkpoints_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(&path).map_err(|e| {
            Error::config(format!(
                "cannot read config `{}`: {e}",
                path.as_ref().display()
            ))
        })?;
        ExperimentConfig::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nstages == 0 {
            return Err(Error::config("nstages must be at least 1"));
        }
        if self.training.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.weights.lambda_gp < 0.0 || self.weights.lambda_clamp < 0.0 {
            return Err(Error::config("loss weights must be non-negative"));
        }
        if self.weights.epsilon_margin < 0.0 {
            return Err(Error::config("epsilon_margin must be non-negative"));
        }
        self.schedule.validate()?;
        self.completion.config.validate()?;
        if self.completion.n_images == 0 {
            return Err(Error::config("completion needs at least one image"));
        }
        if self.metrics.samples == 0 || self.metrics.projections == 0 {
            return Err(Error::config("metric sample counts must be positive"));
        }
        if self.dataset.n_samples < 10 {
            return Err(Error::config("dataset too small for a 90-10 split"));
        }
        Ok(())
    }

    /// Validates and materializes defaults. `seed_override` and
    /// `out_override` come from the command line.
    pub fn resolve(
        mut self,
        seed_override: Option<u64>,
        out_override: Option<PathBuf>,
    ) -> Result<ResolvedConfig> {
        if let Some(seed) = seed_override {
            self.seed = seed;
        }
        if let Some(out) = out_override {
            self.out_dir = out;
        }
        self.validate()?;
        let latent_dim = self
            .arch
            .latent_dim
            .unwrap_or_else(|| Architecture::default_latent_dim(self.dataset.kind));
        if latent_dim == 0 {
            return Err(Error::config("latent_dim must be positive"));
        }
        let checkpoints_dir = self
            .completion
            .checkpoints_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.clone());
        let resolved_seeds = ResolvedSeeds::resolve(self.seed, &self.seeds);
        Ok(ResolvedConfig {
            raw: self,
            resolved_seeds,
            latent_dim,
            checkpoints_dir,
        })
    }
}

impl ResolvedConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture::for_dataset(
            self.raw.dataset.kind,
            self.latent_dim,
            &self.raw.arch.gen_hidden,
            &self.raw.arch.disc_hidden,
            &self.raw.arch.enc_hidden,
        )
    }

    /// Pretty JSON for `config.resolved`, newline-terminated.
    pub fn to_resolved_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }
}
