//! Reconstruction, region and symmetry objectives for the sketch encoder.

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::image::Image;
use crate::render::RegionSpec;
use crate::triplane::TriPlane;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptualConfig {
    /// Output channels of each stage; every stage halves the resolution.
    pub stages: Vec<usize>,
    pub seed: u64,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        Self { stages: vec![8, 16, 16], seed: 0x5eed }
    }
}

/// Frozen multi-scale feature pyramid: `3×3` stride-2 convolutions with
/// fixed random weights and leaky-ReLU activations.
#[derive(Debug, Clone)]
pub struct PerceptualExtractor {
    in_channels: usize,
    /// `(weights, out, in)` per stage, row-major `(out, in, 3, 3)`.
    stages: Vec<(Vec<f64>, usize, usize)>,
}

impl PerceptualExtractor {
    pub fn new(in_channels: usize, cfg: &PerceptualConfig) -> Result<Self> {
        if cfg.stages.is_empty() || in_channels == 0 {
            return Err(Error::Config("perceptual extractor needs at least one stage".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut stages = Vec::new();
        let mut c_in = in_channels;
        for &c_out in &cfg.stages {
            let std = (2.0 / (9 * c_in) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let w = (0..c_out * c_in * 9).map(|_| normal.sample(&mut rng)).collect();
            stages.push((w, c_out, c_in));
            c_in = c_out;
        }
        Ok(Self { in_channels, stages })
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Feature maps of every stage for a `(B, C, H, W)` batch.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        if x.dim(1)? != self.in_channels {
            return Err(shape_err(format!(
                "extractor expects {} channels, got {}",
                self.in_channels,
                x.dim(1)?
            )));
        }
        let mut out = Vec::with_capacity(self.stages.len());
        let mut h = x.clone();
        for (w, c_out, c_in) in &self.stages {
            let k = Tensor::from_slice(w, (*c_out, *c_in, 3, 3), x.device())?.to_dtype(x.dtype())?;
            h = candle_nn::ops::leaky_relu(&h.conv2d(&k, 1, 2, 1, 1)?, 0.2)?;
            out.push(h.clone());
        }
        Ok(out)
    }
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(shape_err(format!("loss operands {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean absolute pixel difference plus, per extractor stage, the mean
/// absolute feature difference.
pub fn recon_loss(a: &Tensor, b: &Tensor, px: Option<&PerceptualExtractor>) -> Result<Tensor> {
    check_same(a, b)?;
    let mut loss = (a - b)?.abs()?.mean_all()?;
    if let Some(px) = px {
        for (fa, fb) in px.features(a)?.iter().zip(px.features(b)?.iter()) {
            loss = (loss + (fa - fb)?.abs()?.mean_all()?)?;
        }
    }
    Ok(loss)
}

/// Sum of `recon_loss` over the four facial regions.
pub fn region_loss(renders: &[Tensor], gts: &[Tensor], px: Option<&PerceptualExtractor>) -> Result<Tensor> {
    if renders.len() != 4 || gts.len() != 4 {
        return Err(shape_err(format!(
            "region loss takes 4 regions, got {} renders and {} targets",
            renders.len(),
            gts.len()
        )));
    }
    let mut total: Option<Tensor> = None;
    for (r, g) in renders.iter().zip(gts) {
        let l = recon_loss(r, g, px)?;
        total = Some(match total {
            None => l,
            Some(t) => (t + l)?,
        });
    }
    Ok(total.expect("four regions"))
}

/// Splits a sample-major `(B·K, C, h, h)` region batch into `K` tensors of
/// shape `(B, C, h, h)`.
pub fn split_regions(t: &Tensor, k: usize) -> Result<Vec<Tensor>> {
    let (bk, c, h, w) = t.dims4()?;
    if k == 0 || bk % k != 0 {
        return Err(shape_err(format!("{bk} region renders not divisible by {k}")));
    }
    let grouped = t.reshape((bk / k, k, c, h, w))?;
    (0..k).map(|i| Ok(grouped.narrow(1, i, 1)?.squeeze(1)?)).collect()
}

/// Mean absolute difference between `F_S` and the flip of `F_Sbar`.
pub fn symmetry_loss(f_s: &TriPlane, f_sbar: &TriPlane) -> Result<Tensor> {
    if !f_s.same_layout(f_sbar) {
        return Err(shape_err(format!(
            "tri-planes {:?} vs {:?}",
            f_s.tensor().dims(),
            f_sbar.tensor().dims()
        )));
    }
    Ok((f_s.tensor() - f_sbar.flip()?.tensor())?.abs()?.mean_all()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub recon: f64,
    pub region: f64,
    pub symmetry: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { recon: 1.0, region: 1.0, symmetry: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub region: f64,
    pub symmetry: f64,
    pub total: f64,
}

/// Everything one encoder step is scored on.
pub struct EncoderLossInputs<'a> {
    /// `I_RGB`, `(B, 3, h, h)`.
    pub rgb: &'a Tensor,
    /// `I⁻_GT`, same shape.
    pub gt: &'a Tensor,
    /// Four `(B, 3, h, h)` region renders, in `RegionKind::ALL` order.
    pub region_renders: &'a [Tensor],
    pub region_gts: &'a [Tensor],
    pub planes: &'a TriPlane,
    /// Tri-plane synthesized from the flipped sketch; `None` skips the term.
    pub planes_flipped: Option<&'a TriPlane>,
}

/// Weighted sum `λ₁·recon + λ₂·region + λ₃·symmetry` and its per-term values.
pub fn total_encoder_loss(
    inputs: &EncoderLossInputs,
    weights: &LossWeights,
    px: Option<&PerceptualExtractor>,
) -> Result<(Tensor, LossBreakdown)> {
    let recon = recon_loss(inputs.rgb, inputs.gt, px)?;
    let region = if weights.region != 0.0 || !inputs.region_renders.is_empty() {
        region_loss(inputs.region_renders, inputs.region_gts, px)?
    } else {
        recon.zeros_like()?
    };
    let symmetry = match inputs.planes_flipped {
        Some(f) => symmetry_loss(inputs.planes, f)?,
        None => recon.zeros_like()?,
    };
    let total = (((&recon * weights.recon)? + (&region * weights.region)?)? + (&symmetry * weights.symmetry)?)?;
    let v = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
    let breakdown = LossBreakdown {
        recon: v(&recon)?,
        region: v(&region)?,
        symmetry: v(&symmetry)?,
        total: v(&total)?,
    };
    Ok((total, breakdown))
}

/// Supervision targets derived from one final-resolution image.
#[derive(Debug, Clone)]
pub struct GroundTruthPair {
    pub full: Image,
    /// `full` area-downsampled to the working resolution.
    pub low: Image,
    /// Region crops resized to the working resolution, in region order.
    pub regions: Vec<Image>,
}

impl GroundTruthPair {
    pub fn new(full: Image, working: usize, regions: &[RegionSpec]) -> Result<Self> {
        if working == 0 || full.height != full.width || full.height % working != 0 {
            return Err(shape_err(format!(
                "{}x{} image cannot be reduced to {working}",
                full.height, full.width
            )));
        }
        let low = full.area_downsample(full.height / working)?;
        let mut crops = Vec::with_capacity(regions.len());
        for r in regions {
            r.validate()?;
            let (u0, v0) = r.origin();
            crops.push(full.crop_resize(u0, v0, r.scale, working));
        }
        Ok(Self { full, low, regions: crops })
    }

    pub fn low_tensor(&self, dtype: DType) -> Result<Tensor> {
        self.low.to_tensor(dtype, &Device::Cpu)
    }
}
