//! Volume rendering of tri-planes into multi-channel feature images.

mod camera;
mod composite;

pub use camera::{generate_rays, mirror_camera, Camera, Ray, Window};
pub use composite::{composite, composite_tensor};

use candle_core::{DType, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::image::Image;
use crate::triplane::{Point3, PointDecoder, TriPlane};

/// Rays are processed in fixed-size chunks so every chunk of a large render
/// goes through identically shaped kernels.
const RAY_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    /// Output is `resolution × resolution`.
    pub resolution: usize,
    pub samples_per_ray: usize,
    pub near: f64,
    pub far: f64,
    /// Feature assigned to the residual transmittance; empty means zeros.
    #[serde(default)]
    pub background: Vec<f64>,
    /// Seed for stratified jitter; `None` samples bin midpoints.
    #[serde(default)]
    pub jitter: Option<u64>,
}

impl RenderConfig {
    /// Bounds the `[-extent, extent]^3` cube from an orbit of `radius`.
    pub fn for_orbit(resolution: usize, samples_per_ray: usize, radius: f64, extent: f64) -> Self {
        let cam = Camera { radius, ..Camera::orbit(0.0, 0.0) };
        let (near, far) = cam.bounds(extent);
        Self {
            resolution,
            samples_per_ray,
            near,
            far,
            background: Vec::new(),
            jitter: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.samples_per_ray == 0 || !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidInput(format!(
                "render config needs h >= 1, N_s >= 1, 0 < near < far; got {self:?}"
            )));
        }
        Ok(())
    }

    fn spacing(&self) -> f64 {
        (self.far - self.near) / self.samples_per_ray as f64
    }
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self::for_orbit(128, 48, Camera::DEFAULT_RADIUS, 1.0)
    }
}

/// Rendered `(B, C, h, h)` feature image; channels `0..3` are the RGB view.
#[derive(Debug, Clone)]
pub struct FeatureImage {
    features: Tensor,
}

impl FeatureImage {
    pub fn new(features: Tensor) -> Result<Self> {
        match features.rank() {
            3 => Ok(Self { features: features.unsqueeze(0)? }),
            4 => Ok(Self { features }),
            r => Err(shape_err(format!("feature image of rank {r}"))),
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.features
    }

    pub fn channels(&self) -> usize {
        self.features.dims()[1]
    }

    pub fn resolution(&self) -> usize {
        self.features.dims()[2]
    }

    pub fn batch_size(&self) -> usize {
        self.features.dims()[0]
    }

    /// `(B, 3, h, h)` view of the first three channels.
    pub fn rgb(&self) -> Result<Tensor> {
        Ok(self.features.narrow(1, 0, 3)?)
    }

    pub fn rgb_image(&self, b: usize) -> Result<Image> {
        Image::from_tensor(&self.rgb()?.narrow(0, b, 1)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    LeftEye,
    RightEye,
    Nose,
    Mouth,
}

impl RegionKind {
    pub const ALL: [RegionKind; 4] = [
        RegionKind::LeftEye,
        RegionKind::RightEye,
        RegionKind::Nose,
        RegionKind::Mouth,
    ];

    pub fn default_scale(self) -> f64 {
        match self {
            RegionKind::LeftEye | RegionKind::RightEye => 0.25,
            RegionKind::Nose | RegionKind::Mouth => 0.30,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegionKind::LeftEye => "left_eye",
            RegionKind::RightEye => "right_eye",
            RegionKind::Nose => "nose",
            RegionKind::Mouth => "mouth",
        }
    }
}

/// A square box on the image: center in normalized `[0, 1]^2` coordinates,
/// side `scale` (fraction of the image side).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub kind: RegionKind,
    pub center: (f64, f64),
    pub scale: f64,
}

impl RegionSpec {
    pub fn new(kind: RegionKind, center: (f64, f64), scale: f64) -> Result<Self> {
        let r = Self { kind, center, scale };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let half = self.scale * 0.5;
        let (cx, cy) = self.center;
        let ok = self.scale > 0.0
            && self.scale <= 1.0
            && cx - half >= 0.0
            && cy - half >= 0.0
            && cx + half <= 1.0
            && cy + half <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::RegionOutOfBounds(format!(
                "{} box centered at ({cx}, {cy}) with side {}",
                self.kind.name(),
                self.scale
            )))
        }
    }

    /// Top-left corner `(u0, v0)` of the box.
    pub fn origin(&self) -> (f64, f64) {
        (self.center.0 - self.scale * 0.5, self.center.1 - self.scale * 0.5)
    }

    /// The same box reflected across the vertical center line.
    pub fn mirror(&self) -> RegionSpec {
        let kind = match self.kind {
            RegionKind::LeftEye => RegionKind::RightEye,
            RegionKind::RightEye => RegionKind::LeftEye,
            k => k,
        };
        RegionSpec {
            kind,
            center: (1.0 - self.center.0, self.center.1),
            scale: self.scale,
        }
    }
}

/// Camera whose full pixel grid covers exactly the region's sub-frustum.
pub fn region_camera(cam: &Camera, region: &RegionSpec) -> Result<Camera> {
    region.validate()?;
    let (u, v) = region.origin();
    let w = cam.window;
    Ok(Camera {
        window: Window {
            u0: w.u0 + w.span * u,
            v0: w.v0 + w.span * v,
            span: w.span * region.scale,
        },
        ..*cam
    })
}

/// Sample distances along a ray.
fn sample_ts(cfg: &RenderConfig, rng: Option<&mut ChaCha8Rng>) -> Vec<f64> {
    let step = cfg.spacing();
    match rng {
        None => (0..cfg.samples_per_ray)
            .map(|k| cfg.near + (k as f64 + 0.5) * step)
            .collect(),
        Some(rng) => (0..cfg.samples_per_ray)
            .map(|k| cfg.near + (k as f64 + rng.gen::<f64>()) * step)
            .collect(),
    }
}

/// Renders one feature image per camera. The tri-plane batch is either of
/// size one (shared by every camera) or matches the camera count.
pub fn render(
    planes: &TriPlane,
    dec: &PointDecoder,
    cams: &[Camera],
    cfg: &RenderConfig,
) -> Result<FeatureImage> {
    cfg.validate()?;
    if cams.is_empty() {
        return Err(Error::InvalidInput("render needs at least one camera".into()));
    }
    let shared = planes.batch_size() == 1;
    if !shared && planes.batch_size() != cams.len() {
        return Err(shape_err(format!(
            "{} tri-planes for {} cameras",
            planes.batch_size(),
            cams.len()
        )));
    }
    if dec.config().in_channels != planes.channels() {
        return Err(shape_err(format!(
            "decoder expects {} channels, tri-plane has {}",
            dec.config().in_channels,
            planes.channels()
        )));
    }
    let c = dec.config().feature_channels;
    let dtype = planes.dtype();
    let device = planes.tensor().device().clone();
    let background = if cfg.background.is_empty() {
        Tensor::zeros(c, dtype, &device)?
    } else if cfg.background.len() == c {
        Tensor::from_slice(&cfg.background, c, &device)?.to_dtype(dtype)?
    } else {
        return Err(shape_err(format!("background has {} channels, expected {c}", cfg.background.len())));
    };
    let h = cfg.resolution;
    let ns = cfg.samples_per_ray;
    let table = planes.table()?;
    let mut images = Vec::with_capacity(cams.len());
    for (b, cam) in cams.iter().enumerate() {
        cam.validate()?;
        let plane_idx = if shared { 0 } else { b };
        let rays = cam.generate_rays(h);
        let mut rng = cfg.jitter.map(|s| ChaCha8Rng::seed_from_u64(s ^ ((b as u64) << 32)));
        let mut chunks = Vec::with_capacity(rays.len().div_ceil(RAY_CHUNK));
        for chunk in rays.chunks(RAY_CHUNK) {
            let mut points = Vec::with_capacity(chunk.len() * ns);
            for ray in chunk {
                let ts = sample_ts(cfg, rng.as_mut());
                points.extend(ts.iter().map(|&t| ray.at(t)));
            }
            let index = vec![plane_idx; points.len()];
            let feat = planes.query_with_table(&table, &index, &points, dec.config().aggregation)?;
            let (color, sigma) = dec.forward(&feat)?;
            let n_rays = chunk.len();
            let deltas = Tensor::full(cfg.spacing(), (n_rays, ns), &device)?.to_dtype(dtype)?;
            let (pix, _) = composite_tensor(
                &sigma.reshape((n_rays, ns))?,
                &color.reshape((n_rays, ns, c))?,
                &deltas,
                &background,
            )?;
            chunks.push(pix);
        }
        let img = Tensor::cat(&chunks, 0)?.t()?.reshape((c, h, h))?;
        images.push(img);
    }
    FeatureImage::new(Tensor::stack(&images, 0)?)
}

/// Renders each region of each sample at the full working resolution.
/// `regions[b]` are rendered from `cams[b]`; output is `(B·K, C, h, h)` in
/// sample-major order.
pub fn render_regions(
    planes: &TriPlane,
    dec: &PointDecoder,
    cams: &[Camera],
    regions: &[Vec<RegionSpec>],
    cfg: &RenderConfig,
) -> Result<FeatureImage> {
    if regions.len() != cams.len() {
        return Err(shape_err("one region list per camera"));
    }
    let mut region_cams = Vec::new();
    let mut plane_index = Vec::new();
    for (b, (cam, list)) in cams.iter().zip(regions).enumerate() {
        for r in list {
            region_cams.push(region_camera(cam, r)?);
            plane_index.push(b);
        }
    }
    if planes.batch_size() == 1 {
        return render(planes, dec, &region_cams, cfg);
    }
    let idx = Tensor::from_vec(
        plane_index.iter().map(|&i| i as u32).collect::<Vec<_>>(),
        plane_index.len(),
        planes.tensor().device(),
    )?;
    let expanded = TriPlane::new(planes.tensor().contiguous()?.index_select(&idx, 0)?, planes.extent())?;
    render(&expanded, dec, &region_cams, cfg)
}

/// Horizontal flip of a `(B, C, H, W)` tensor.
pub fn hflip_tensor(t: &Tensor) -> Result<Tensor> {
    let w = t.dim(3)?;
    let rev: Vec<u32> = (0..w as u32).rev().collect();
    let rev = Tensor::from_vec(rev, w, t.device())?;
    Ok(t.contiguous()?.index_select(&rev, 3)?)
}

/// Converts a tensor to a flat `Vec<f64>`.
pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}

/// World point on a camera ray at distance `t` (exposed for data synthesis).
pub fn ray_point(ray: &Ray, t: f64) -> Point3 {
    ray.at(t)
}
