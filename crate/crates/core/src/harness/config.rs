use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{CameraDistribution, SampleOptions};
use crate::encoder::{EncoderArch, EncoderConfig};
use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, LatentMode};
use crate::losses::{LossWeights, PerceptualConfig};
use crate::render::RenderConfig;
use crate::triplane::{Aggregation, DecoderConfig};
use crate::vq::VqConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Vq,
    Contour,
    Sssp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train_samples: usize,
    pub val_samples: usize,
    pub seed: u64,
    pub cameras: CameraDistribution,
    /// `Some(b)` forces (a)symmetric faces.
    pub symmetric: Option<bool>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { train_samples: 256, val_samples: 32, seed: 1, cameras: CameraDistribution::default(), symmetric: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub log_every: usize,
    /// Stop once the running loss falls below this fraction of the first
    /// step's loss (`None` runs every step).
    pub stop_below_fraction: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            steps: 1000,
            batch_size: 8,
            beta1: 0.9,
            beta2: 0.999,
            log_every: 50,
            stop_below_fraction: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Final image and sketch resolution `H`.
    pub image_resolution: usize,
    /// Working (render) resolution `h`.
    pub render_resolution: usize,
    pub samples_per_ray: usize,
    pub generator: GeneratorConfig,
    pub decoder_hidden: usize,
    pub decoder_layers: usize,
    pub aggregation: Aggregation,
    pub encoder_channels: usize,
    pub encoder_arch: EncoderArch,
    pub latent_mode: LatentMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_resolution: 64,
            render_resolution: 32,
            samples_per_ray: 24,
            generator: GeneratorConfig::desk(),
            decoder_hidden: 64,
            decoder_layers: 2,
            aggregation: Aggregation::Sum,
            encoder_channels: 16,
            encoder_arch: EncoderArch::Desk,
            latent_mode: LatentMode::W,
        }
    }
}

impl ModelConfig {
    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            in_channels: self.generator.plane_channels,
            hidden: self.decoder_hidden,
            hidden_layers: self.decoder_layers,
            feature_channels: self.generator.feature_channels,
            aggregation: self.aggregation,
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            resolution: self.image_resolution,
            base_channels: self.encoder_channels,
            arch: self.encoder_arch,
            w_dim: self.generator.w_dim,
            mode: self.latent_mode,
            num_layers: self.generator.num_layers(),
        }
    }

    /// Renderer settings at the working resolution, with a white RGB
    /// background matching the synthetic portraits.
    pub fn render(&self, radius: f64) -> RenderConfig {
        let mut cfg = RenderConfig::for_orbit(
            self.render_resolution,
            self.samples_per_ray,
            radius,
            self.generator.extent,
        );
        let mut bg = vec![0.0; self.generator.feature_channels];
        bg[..3].iter_mut().for_each(|v| *v = 1.0);
        cfg.background = bg;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.render_resolution * self.generator.sr_factor != self.image_resolution {
            return Err(Error::Config(format!(
                "render resolution {} × sr factor {} must equal image resolution {}",
                self.render_resolution, self.generator.sr_factor, self.image_resolution
            )));
        }
        if self.generator.feature_channels < 3 || self.samples_per_ray == 0 {
            return Err(Error::Config("need >= 3 feature channels and >= 1 sample per ray".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContourConfig {
    /// Copy the tokenizer weights into the contour encoder before training.
    pub init_from_teacher: bool,
    pub ce_weight: f64,
    pub distance_weight: f64,
}

impl Default for ContourConfig {
    fn default() -> Self {
        Self { init_from_teacher: true, ce_weight: 1.0, distance_weight: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub seed: u64,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub vq: VqConfig,
    pub contour: ContourConfig,
    /// Initialize the codebook from tokenizer outputs on training data.
    pub vq_data_init: bool,
    /// Reassign codebook entries unused for this many steps (0 disables).
    pub vq_restart_every: usize,
    pub loss_weights: LossWeights,
    /// `None` disables the perceptual term.
    pub perceptual: Option<PerceptualConfig>,
    pub region_loss: bool,
    /// Also supervise the super-resolved output `I⁺_RGB` against `I_GT`.
    pub loss_on_final: bool,
    pub frozen_generator: bool,
    /// Checkpoint whose parameters initialize the model (e.g. a pretrained
    /// generator for frozen-generator inversion).
    pub init_checkpoint: Option<PathBuf>,
    /// Trained VQ checkpoint (teacher) for the contour stage.
    pub vq_checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Sssp,
            seed: 0,
            optim: OptimConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            vq: VqConfig::default(),
            contour: ContourConfig::default(),
            vq_data_init: true,
            vq_restart_every: 100,
            loss_weights: LossWeights::default(),
            perceptual: Some(PerceptualConfig::default()),
            region_loss: true,
            loss_on_final: false,
            frozen_generator: false,
            init_checkpoint: None,
            vq_checkpoint: None,
            output: None,
        }
    }
}

impl TrainConfig {
    /// Desk-scale settings for `stage` that train in minutes on one CPU
    /// core. Stages share the data seed and the 64 px canvas, so a smoke VQ
    /// checkpoint and a smoke portrait checkpoint can be served together.
    pub fn smoke(stage: Stage) -> Self {
        let mut cfg = Self { stage, ..Default::default() };
        cfg.vq = VqConfig { downsample: 4, channels: 8, codebook_size: 64, code_dim: 32, ..Default::default() };
        cfg.optim.log_every = 100;
        match stage {
            Stage::Vq => {
                cfg.optim.learning_rate = 2e-3;
                cfg.optim.steps = 600;
            }
            Stage::Contour => {
                cfg.optim.learning_rate = 3e-4;
                cfg.optim.steps = 300;
            }
            Stage::Sssp => {
                let m = &mut cfg.model;
                m.render_resolution = 16;
                m.samples_per_ray = 12;
                m.generator = GeneratorConfig {
                    w_dim: 64,
                    plane_resolution: 16,
                    plane_channels: 8,
                    backbone_channels: 32,
                    feature_channels: 8,
                    sr_factor: 4,
                    sr_channels: 16,
                    ..GeneratorConfig::desk()
                };
                m.decoder_hidden = 32;
                m.encoder_channels = 8;
                cfg.data.train_samples = 64;
                cfg.data.val_samples = 16;
                cfg.optim.batch_size = 4;
                cfg.optim.learning_rate = 2e-3;
                cfg.optim.steps = 300;
            }
        }
        cfg
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_value(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }

    pub fn sample_options(&self) -> SampleOptions {
        SampleOptions {
            resolution: self.model.image_resolution,
            cameras: self.data.cameras,
            symmetric: self.data.symmetric,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.optim.steps == 0 || self.optim.batch_size == 0 || !(self.optim.learning_rate > 0.0) {
            return Err(Error::Config("steps, batch size and learning rate must be positive".into()));
        }
        if self.data.train_samples == 0 {
            return Err(Error::Config("need at least one training sample".into()));
        }
        match self.stage {
            Stage::Vq | Stage::Contour => {
                self.vq.validate()?;
                if self.vq.resolution != self.model.image_resolution {
                    return Err(Error::Config(format!(
                        "VQ resolution {} differs from sketch resolution {}",
                        self.vq.resolution, self.model.image_resolution
                    )));
                }
                if self.stage == Stage::Contour && self.vq_checkpoint.is_none() {
                    return Err(Error::Config("contour stage needs vq_checkpoint".into()));
                }
            }
            Stage::Sssp => self.model.validate()?,
        }
        Ok(())
    }
}
