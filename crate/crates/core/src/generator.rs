//! Style-modulated tri-plane generator and super-resolution head.
//!
//! The backbone grows a learned 4×4 constant into a `3·C_t`-channel map at
//! the plane resolution, which is split channel-wise into the xy, xz and yz
//! planes. The super-resolution head upsamples a rendered feature image to
//! the final resolution as a residual on top of its RGB channels.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{self, Init, Linear, ModConv2d, Scope};
use crate::render::FeatureImage;
use crate::triplane::TriPlane;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LatentMode {
    #[default]
    W,
    WPlus,
}

/// A latent code for a batch: `(B, d_w)` in W mode, `(B, L, d_w)` in W+.
#[derive(Debug, Clone)]
pub enum LatentCode {
    W(Tensor),
    WPlus(Tensor),
}

impl LatentCode {
    pub fn mode(&self) -> LatentMode {
        match self {
            LatentCode::W(_) => LatentMode::W,
            LatentCode::WPlus(_) => LatentMode::WPlus,
        }
    }

    pub fn tensor(&self) -> &Tensor {
        match self {
            LatentCode::W(t) | LatentCode::WPlus(t) => t,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.tensor().dims()[0]
    }

    pub fn w_dim(&self) -> usize {
        *self.tensor().dims().last().unwrap_or(&0)
    }

    /// Repeats a W code once per layer.
    pub fn broadcast(&self, layers: usize) -> Result<LatentCode> {
        match self {
            LatentCode::W(t) => {
                let (b, d) = t.dims2()?;
                Ok(LatentCode::WPlus(t.unsqueeze(1)?.broadcast_as((b, layers, d))?.contiguous()?))
            }
            LatentCode::WPlus(_) => Ok(self.clone()),
        }
    }

    /// Style vector `(B, d_w)` for modulated layer `l`.
    fn layer(&self, l: usize) -> Result<Tensor> {
        match self {
            LatentCode::W(t) => Ok(t.clone()),
            LatentCode::WPlus(t) => Ok(t.narrow(1, l, 1)?.squeeze(1)?),
        }
    }

    pub fn detach(&self) -> LatentCode {
        match self {
            LatentCode::W(t) => LatentCode::W(t.detach()),
            LatentCode::WPlus(t) => LatentCode::WPlus(t.detach()),
        }
    }

    pub fn narrow(&self, start: usize, len: usize) -> Result<LatentCode> {
        Ok(match self {
            LatentCode::W(t) => LatentCode::W(t.narrow(0, start, len)?),
            LatentCode::WPlus(t) => LatentCode::WPlus(t.narrow(0, start, len)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub w_dim: usize,
    pub plane_resolution: usize,
    pub plane_channels: usize,
    pub backbone_channels: usize,
    /// Channels of the rendered feature image fed to the SR head.
    pub feature_channels: usize,
    /// Final resolution = render resolution × `sr_factor` (a power of two).
    pub sr_factor: usize,
    pub sr_channels: usize,
    pub extent: f64,
    /// Adds a learned embedding of (yaw, pitch) to every style vector.
    #[serde(default)]
    pub pose_conditioning: bool,
}

impl GeneratorConfig {
    /// Full-scale shapes: 256×256×96 backbone map, 128 → 512 upsampling.
    pub fn full_scale() -> Self {
        Self {
            w_dim: 512,
            plane_resolution: 256,
            plane_channels: 32,
            backbone_channels: 128,
            feature_channels: 32,
            sr_factor: 4,
            sr_channels: 64,
            extent: 1.0,
            pose_conditioning: false,
        }
    }

    pub fn desk() -> Self {
        Self {
            w_dim: 128,
            plane_resolution: 32,
            plane_channels: 16,
            backbone_channels: 64,
            feature_channels: 16,
            sr_factor: 2,
            sr_channels: 32,
            extent: 1.0,
            pose_conditioning: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.plane_resolution;
        if r < 4 || !r.is_power_of_two() {
            return Err(Error::Config(format!("plane resolution {r} must be a power of two >= 4")));
        }
        if self.sr_factor == 0 || !self.sr_factor.is_power_of_two() {
            return Err(Error::Config(format!("sr factor {} must be a power of two", self.sr_factor)));
        }
        if self.feature_channels < 3 {
            return Err(Error::Config("feature image needs at least 3 channels".into()));
        }
        Ok(())
    }

    fn upsample_steps(&self) -> usize {
        (self.plane_resolution / 4).trailing_zeros() as usize
    }

    fn sr_steps(&self) -> usize {
        self.sr_factor.trailing_zeros() as usize
    }

    /// Number of modulated layers, i.e. the W+ stack height.
    pub fn num_layers(&self) -> usize {
        (1 + self.upsample_steps() + 1) + (self.sr_steps() + 1)
    }

    pub fn backbone_layers(&self) -> usize {
        self.upsample_steps() + 2
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    cfg: GeneratorConfig,
    constant: Tensor,
    backbone: Vec<ModConv2d>,
    to_planes: ModConv2d,
    sr: Vec<ModConv2d>,
    to_rgb: ModConv2d,
    pose_embed: Option<Linear>,
}

impl Generator {
    /// `scope` is the `generator` prefix; parameters land under
    /// `generator.backbone.*` and `generator.sr.*`.
    pub fn new(scope: &Scope, cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let bb = scope.pp("backbone");
        let ch = cfg.backbone_channels;
        let constant = bb.get("const", (1, ch, 4, 4), Init::Normal { std: 1.0 })?;
        let mut backbone = Vec::new();
        for i in 0..=cfg.upsample_steps() {
            backbone.push(ModConv2d::new(&bb.pp(format!("conv{i}")), cfg.w_dim, ch, ch, 3, true)?);
        }
        let to_planes = ModConv2d::new(&bb.pp("to_planes"), cfg.w_dim, ch, 3 * cfg.plane_channels, 1, false)?;
        let sr_scope = scope.pp("sr");
        let mut sr = Vec::new();
        let mut in_ch = cfg.feature_channels;
        for i in 0..cfg.sr_steps() {
            sr.push(ModConv2d::new(&sr_scope.pp(format!("conv{i}")), cfg.w_dim, in_ch, cfg.sr_channels, 3, true)?);
            in_ch = cfg.sr_channels;
        }
        let to_rgb = ModConv2d::zero_init(&sr_scope.pp("to_rgb"), cfg.w_dim, in_ch, 3, 1)?;
        let pose_embed = if cfg.pose_conditioning {
            Some(Linear::with_weight_init(&bb.pp("pose_embed"), 2, cfg.w_dim, Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { cfg, constant, backbone, to_planes, sr, to_rgb, pose_embed })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    fn check_latent(&self, w: &LatentCode) -> Result<()> {
        if w.w_dim() != self.cfg.w_dim {
            return Err(shape_err(format!("latent dim {} != {}", w.w_dim(), self.cfg.w_dim)));
        }
        if let LatentCode::WPlus(t) = w {
            let l = t.dims().get(1).copied().unwrap_or(0);
            if t.rank() != 3 || l != self.cfg.num_layers() {
                return Err(shape_err(format!(
                    "W+ code has {l} layers, generator has {}",
                    self.cfg.num_layers()
                )));
            }
        } else if w.tensor().rank() != 2 {
            return Err(shape_err("W code must be (B, d_w)"));
        }
        Ok(())
    }

    fn style(&self, w: &LatentCode, l: usize, pose: Option<&Tensor>) -> Result<Tensor> {
        let s = w.layer(l)?;
        match (&self.pose_embed, pose) {
            (Some(embed), Some(p)) => Ok((s + embed.forward(p)?)?),
            _ => Ok(s),
        }
    }

    /// Latent → batch of tri-planes. `pose` is `(B, 2)` yaw/pitch, used only
    /// when pose conditioning is enabled.
    pub fn synthesize(&self, w: &LatentCode, pose: Option<&Tensor>) -> Result<TriPlane> {
        self.check_latent(w)?;
        let b = w.batch_size();
        let ch = self.cfg.backbone_channels;
        let mut x = self.constant.broadcast_as((b, ch, 4, 4))?.contiguous()?;
        for (i, conv) in self.backbone.iter().enumerate() {
            if i > 0 {
                let (_, _, h, _) = x.dims4()?;
                x = x.upsample_nearest2d(2 * h, 2 * h)?;
            }
            x = nn::leaky_relu(&conv.forward(&x, &self.style(w, i, pose)?)?)?;
        }
        let planes = self.to_planes.forward(&x, &self.style(w, self.backbone.len(), pose)?)?;
        let r = self.cfg.plane_resolution;
        let planes = planes.reshape((b, 3, self.cfg.plane_channels, r, r))?;
        TriPlane::new(planes, self.cfg.extent)
    }

    /// Feature image `(B, C, h, h)` → final RGB `(B, 3, h·k, h·k)`.
    pub fn upsample(&self, features: &FeatureImage, w: &LatentCode, pose: Option<&Tensor>) -> Result<Tensor> {
        self.check_latent(w)?;
        let x0 = features.tensor();
        let (b, c, h, _) = x0.dims4()?;
        if c != self.cfg.feature_channels || b != w.batch_size() {
            return Err(shape_err(format!(
                "feature image {:?} vs generator channels {} and batch {}",
                x0.dims(),
                self.cfg.feature_channels,
                w.batch_size()
            )));
        }
        let out = h * self.cfg.sr_factor;
        let base = self.cfg.backbone_layers();
        let mut x = x0.clone();
        for (i, conv) in self.sr.iter().enumerate() {
            let (_, _, hh, _) = x.dims4()?;
            x = x.upsample_nearest2d(2 * hh, 2 * hh)?;
            x = nn::leaky_relu(&conv.forward(&x, &self.style(w, base + i, pose)?)?)?;
        }
        let residual = self.to_rgb.forward(&x, &self.style(w, base + self.sr.len(), pose)?)?;
        let skip = features.rgb()?.upsample_nearest2d(out, out)?;
        Ok((skip + residual)?)
    }
}

pub fn synthesize_triplane(g: &Generator, w: &LatentCode) -> Result<TriPlane> {
    g.synthesize(w, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::{DType, Device};

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            w_dim: 8,
            plane_resolution: 8,
            plane_channels: 4,
            backbone_channels: 6,
            feature_channels: 5,
            sr_factor: 2,
            sr_channels: 4,
            extent: 1.0,
            pose_conditioning: false,
        }
    }

    fn latent(b: usize, d: usize) -> LatentCode {
        let v: Vec<f64> = (0..b * d).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
        LatentCode::W(Tensor::from_vec(v, (b, d), &Device::Cpu).unwrap())
    }

    #[test]
    fn full_scale_shapes() {
        let cfg = GeneratorConfig::full_scale();
        assert_eq!(3 * cfg.plane_channels, 96);
        assert_eq!(cfg.plane_resolution, 256);
        assert_eq!(128 * cfg.sr_factor, 512);
        assert_eq!(cfg.num_layers(), 8 + 3);
    }

    #[test]
    fn w_and_broadcast_wplus_agree() {
        let store = ParamStore::new(DType::F64, 0);
        let g = Generator::new(&store.root().pp("generator"), tiny()).unwrap();
        let w = latent(2, 8);
        let a = g.synthesize(&w, None).unwrap();
        let b = g.synthesize(&w.broadcast(tiny().num_layers()).unwrap(), None).unwrap();
        assert_eq!(a.tensor().dims(), &[2, 3, 4, 8, 8]);
        let a: Vec<f64> = a.tensor().flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f64> = b.tensor().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_and_finite() {
        let store = ParamStore::new(DType::F64, 0);
        let g = Generator::new(&store.root().pp("generator"), tiny()).unwrap();
        let w = latent(1, 8);
        let a: Vec<f64> = g.synthesize(&w, None).unwrap().tensor().flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f64> = g.synthesize(&w, None).unwrap().tensor().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_layer_count_rejected() {
        let store = ParamStore::new(DType::F64, 0);
        let g = Generator::new(&store.root().pp("generator"), tiny()).unwrap();
        let w = latent(1, 8).broadcast(3).unwrap();
        assert!(g.synthesize(&w, None).is_err());
        assert!(g.synthesize(&latent(1, 7), None).is_err());
    }

    #[test]
    fn upsample_shape_and_zero_residual_start() {
        let store = ParamStore::new(DType::F64, 0);
        let g = Generator::new(&store.root().pp("generator"), tiny()).unwrap();
        let feats = Tensor::rand(0f64, 1f64, (1, 5, 4, 4), &Device::Cpu).unwrap();
        let fi = FeatureImage::new(feats.clone()).unwrap();
        let out = g.upsample(&fi, &latent(1, 8), None).unwrap();
        assert_eq!(out.dims(), &[1, 3, 8, 8]);
        // untrained residual head is zero: output is the nearest-upsampled RGB
        let want = feats.narrow(1, 0, 3).unwrap().upsample_nearest2d(8, 8).unwrap();
        let d: f64 = (out - want).unwrap().abs().unwrap().sum_all().unwrap().to_scalar().unwrap();
        assert_eq!(d, 0.0);
        let bad = FeatureImage::new(Tensor::zeros((1, 4, 4, 4), DType::F64, &Device::Cpu).unwrap()).unwrap();
        assert!(g.upsample(&bad, &latent(1, 8), None).is_err());
    }

    #[test]
    fn desk_shape_contract() {
        let cfg = GeneratorConfig { plane_resolution: 8, ..GeneratorConfig::desk() };
        let store = ParamStore::new(DType::F32, 0);
        let g = Generator::new(&store.root().pp("generator"), cfg).unwrap();
        let fi = FeatureImage::new(Tensor::zeros((1, cfg.feature_channels, 32, 32), DType::F32, &Device::Cpu).unwrap()).unwrap();
        let w = LatentCode::W(Tensor::zeros((1, cfg.w_dim), DType::F32, &Device::Cpu).unwrap());
        assert_eq!(g.upsample(&fi, &w, None).unwrap().dims(), &[1, 3, 64, 64]);
    }
}
