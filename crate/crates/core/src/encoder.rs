//! Residual convolutional sketch encoder mapping a sketch to a W or W+ code.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::generator::{LatentCode, LatentMode};
use crate::image::SketchImage;
use crate::nn::{self, Conv2d, Linear, Scope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderArch {
    /// Stem + four single-block downsampling stages.
    #[default]
    Desk,
    /// 3-4-6-3 basic-block residual network (no normalization layers).
    ResNet34,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub resolution: usize,
    pub base_channels: usize,
    pub arch: EncoderArch,
    pub w_dim: usize,
    pub mode: LatentMode,
    /// Stack height of W+ codes (the generator's modulated-layer count).
    pub num_layers: usize,
}

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl BasicBlock {
    fn new(scope: &Scope, in_ch: usize, out_ch: usize, stride: usize) -> Result<Self> {
        let conv1 = Conv2d::new(&scope.pp("conv1"), in_ch, out_ch, 3, stride, 1)?;
        let conv2 = Conv2d::new(&scope.pp("conv2"), out_ch, out_ch, 3, 1, 1)?;
        let skip = if stride != 1 || in_ch != out_ch {
            Some(Conv2d::new(&scope.pp("skip"), in_ch, out_ch, 1, stride, 0)?)
        } else {
            None
        };
        Ok(Self { conv1, conv2, skip })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv2.forward(&nn::leaky_relu(&self.conv1.forward(x)?)?)?;
        let s = match &self.skip {
            Some(conv) => conv.forward(x)?,
            None => x.clone(),
        };
        nn::leaky_relu(&(y + s)?)
    }
}

#[derive(Debug, Clone)]
pub struct SketchEncoder {
    cfg: EncoderConfig,
    stem: Conv2d,
    blocks: Vec<BasicBlock>,
    head: Linear,
}

impl SketchEncoder {
    /// `scope` is the `encoder.sketch` prefix.
    pub fn new(scope: &Scope, cfg: EncoderConfig) -> Result<Self> {
        let (stem, plan): (Conv2d, Vec<(usize, usize)>) = match cfg.arch {
            EncoderArch::Desk => {
                let c = cfg.base_channels;
                let stem = Conv2d::new(&scope.pp("stem"), 1, c, 3, 1, 1)?;
                (stem, vec![(c, 1), (2 * c, 1), (4 * c, 1), (4 * c, 1)])
            }
            EncoderArch::ResNet34 => {
                let stem = Conv2d::new(&scope.pp("stem"), 1, 64, 7, 2, 3)?;
                (stem, vec![(64, 3), (128, 4), (256, 6), (512, 3)])
            }
        };
        let mut blocks = Vec::new();
        let mut in_ch = match cfg.arch {
            EncoderArch::Desk => cfg.base_channels,
            EncoderArch::ResNet34 => 64,
        };
        for (stage, &(out_ch, count)) in plan.iter().enumerate() {
            for i in 0..count {
                let stride = match cfg.arch {
                    EncoderArch::Desk => 2,
                    EncoderArch::ResNet34 if i == 0 && stage > 0 => 2,
                    EncoderArch::ResNet34 => 1,
                };
                blocks.push(BasicBlock::new(&scope.pp(format!("stage{stage}.block{i}")), in_ch, out_ch, stride)?);
                in_ch = out_ch;
            }
        }
        let heads = match cfg.mode {
            LatentMode::W => 1,
            LatentMode::WPlus => cfg.num_layers,
        };
        // one linear map per W+ layer, stored as a single stacked matrix
        let head = Linear::new(&scope.pp("head"), in_ch, heads * cfg.w_dim)?;
        Ok(Self { cfg, stem, blocks, head })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// `sketches`: `(B, 1, H, H)` in `[0, 1]`.
    pub fn forward(&self, sketches: &Tensor) -> Result<LatentCode> {
        let (b, c, h, w) = sketches.dims4()?;
        if c != 1 || h != self.cfg.resolution || w != self.cfg.resolution {
            return Err(shape_err(format!(
                "encoder expects (B, 1, {r}, {r}), got {:?}",
                sketches.dims(),
                r = self.cfg.resolution
            )));
        }
        let mut x = nn::leaky_relu(&self.stem.forward(&sketches.affine(2.0, -1.0)?)?)?;
        if self.cfg.arch == EncoderArch::ResNet34 {
            x = x.max_pool2d(2)?;
        }
        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        let pooled = x.mean(3)?.mean(2)?;
        let out = self.head.forward(&pooled)?;
        Ok(match self.cfg.mode {
            LatentMode::W => LatentCode::W(out),
            LatentMode::WPlus => LatentCode::WPlus(out.reshape((b, self.cfg.num_layers, self.cfg.w_dim))?),
        })
    }

    pub fn encode(&self, sketch: &SketchImage, dtype: DType) -> Result<LatentCode> {
        let t = sketch.image().to_tensor(dtype, &candle_core::Device::Cpu)?;
        self.forward(&t)
    }
}

pub fn encode_sketch(e: &SketchEncoder, s: &SketchImage) -> Result<LatentCode> {
    e.encode(s, DType::F32)
}
