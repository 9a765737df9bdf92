//! Deterministic synthetic portrait/sketch/contour dataset.

mod contour;
mod face;

pub use contour::{simplify_sketch, thin, LENGTH_FRACTION};
pub use face::{id_edges, render_face, FaceParams, FaceRender, BACKGROUND_COLOR};

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ContourImage, Image, SketchImage};
use crate::render::{Camera, RegionKind, RegionSpec};
use crate::triplane::Point3;

pub const CACHE_ENV: &str = "SSSP_CACHE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraDistribution {
    pub yaw: (f64, f64),
    pub pitch: (f64, f64),
    pub radius: f64,
    pub fov_y: f64,
}

impl Default for CameraDistribution {
    fn default() -> Self {
        Self {
            yaw: (-0.5, 0.5),
            pitch: (-0.2, 0.2),
            radius: Camera::DEFAULT_RADIUS,
            fov_y: Camera::DEFAULT_FOV_Y,
        }
    }
}

impl CameraDistribution {
    pub fn frontal() -> Self {
        Self { yaw: (0.0, 0.0), pitch: (0.0, 0.0), ..Self::default() }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Camera {
        let draw = |rng: &mut R, (lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let yaw = draw(rng, self.yaw);
        let pitch = draw(rng, self.pitch);
        Camera { yaw, pitch, radius: self.radius, fov_y: self.fov_y, window: Default::default() }
    }

    pub fn clamp(&self, yaw: f64, pitch: f64) -> (f64, f64) {
        (yaw.clamp(self.yaw.0, self.yaw.1), pitch.clamp(self.pitch.0, self.pitch.1))
    }
}

/// How faces are drawn from a seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    pub resolution: usize,
    pub cameras: CameraDistribution,
    /// `Some(b)` forces (a)symmetric faces; `None` picks either evenly.
    pub symmetric: Option<bool>,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { resolution: 64, cameras: CameraDistribution::default(), symmetric: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub sketch: SketchImage,
    pub contour: ContourImage,
    /// Boxes in `RegionKind::ALL` order.
    pub regions: Vec<RegionSpec>,
    pub camera: Camera,
    pub face_params: FaceParams,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    seed: u64,
    camera: Camera,
    regions: Vec<RegionSpec>,
    face_params: FaceParams,
}

/// Region box of side `scale` around the projection of `p`, shifted to lie
/// inside the frame.
fn region_box(cam: &Camera, kind: RegionKind, p: Point3) -> RegionSpec {
    let scale = kind.default_scale();
    let (u, v) = cam.project(p).unwrap_or((0.5, 0.5));
    let half = scale * 0.5;
    RegionSpec { kind, center: (u.clamp(half, 1.0 - half), v.clamp(half, 1.0 - half)), scale }
}

pub fn face_regions(params: &FaceParams, cam: &Camera) -> Vec<RegionSpec> {
    RegionKind::ALL
        .iter()
        .map(|&k| {
            let p = match k {
                RegionKind::LeftEye => params.eye_center(true),
                RegionKind::RightEye => params.eye_center(false),
                RegionKind::Nose => params.nose_center(),
                RegionKind::Mouth => params.mouth_center(),
            };
            region_box(cam, k, p)
        })
        .collect()
}

/// Renders a sample for explicit parameters and camera.
pub fn sample_from_params(params: FaceParams, camera: Camera, resolution: usize, seed: u64) -> Sample {
    let r = render_face(&params, &camera, resolution);
    let sketch = SketchImage::new(id_edges(&r.ids, resolution)).expect("square grayscale");
    let contour = simplify_sketch(&sketch);
    Sample {
        image: r.image,
        sketch,
        contour,
        regions: face_regions(&params, &camera),
        camera,
        face_params: params,
        seed,
    }
}

/// Fully determined by `seed` and `opts`.
pub fn generate_sample(seed: u64, opts: &SampleOptions) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let symmetric = opts.symmetric.unwrap_or_else(|| rng.gen_bool(0.5));
    let params = FaceParams::sample(&mut rng, symmetric);
    let camera = opts.cameras.sample(&mut rng);
    sample_from_params(params, camera, opts.resolution, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// Seed of the `index`-th sample of a split. Train seeds are even and val
/// seeds odd, so the splits never share a seed.
pub fn split_seed(split: Split, base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z & !1) | matches!(split, Split::Val) as u64
}

/// Fixed-order dataset description; samples are produced lazily.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub split: Split,
    pub len: usize,
    pub seed: u64,
    pub options: SampleOptions,
}

pub fn dataset(split: Split, n: usize, seed: u64) -> Result<Dataset> {
    Dataset::new(split, n, seed, SampleOptions::default())
}

impl Dataset {
    pub fn new(split: Split, len: usize, seed: u64, options: SampleOptions) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidInput("dataset needs n >= 1".into()));
        }
        Ok(Self { split, len, seed, options })
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.len as u64).map(move |i| split_seed(self.split, self.seed, i))
    }

    /// Sample `i`, read from or written to the cache directory when
    /// `SSSP_CACHE_DIR` is set.
    pub fn get(&self, i: usize) -> Result<Sample> {
        let seed = split_seed(self.split, self.seed, i as u64);
        match std::env::var_os(CACHE_ENV) {
            Some(dir) => cached_sample(Path::new(&dir), seed, &self.options),
            None => Ok(generate_sample(seed, &self.options)),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<Sample>> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn load_all(&self) -> Result<Vec<Sample>> {
        self.iter().collect()
    }
}

fn sample_dir(root: &Path, seed: u64, opts: &SampleOptions) -> PathBuf {
    // the options are part of the key so differently configured runs never collide
    let key = serde_json::to_string(opts).unwrap_or_default();
    let tag = key.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    root.join(format!("{:016x}", tag)).join(format!("{seed:016x}"))
}

pub fn cached_sample(root: &Path, seed: u64, opts: &SampleOptions) -> Result<Sample> {
    let dir = sample_dir(root, seed, opts);
    if dir.join("meta.json").exists() {
        if let Ok(s) = Sample::load(&dir) {
            return Ok(s);
        }
        log::warn!("ignoring unreadable cache entry {}", dir.display());
    }
    let s = generate_sample(seed, opts);
    s.save(&dir)?;
    Ok(s)
}

impl Sample {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.image.save_png(dir.join("image.png"))?;
        self.sketch.image().save_png(dir.join("sketch.png"))?;
        self.contour.image().save_png(dir.join("contour.png"))?;
        let meta = Meta {
            seed: self.seed,
            camera: self.camera,
            regions: self.regions.clone(),
            face_params: self.face_params,
        };
        std::fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: Meta = serde_json::from_slice(&std::fs::read(dir.join("meta.json"))?)?;
        let image = Image::from_png(&std::fs::read(dir.join("image.png"))?, false)?;
        let sketch = SketchImage::new(Image::from_png(&std::fs::read(dir.join("sketch.png"))?, true)?)?;
        let contour = ContourImage::new(Image::from_png(&std::fs::read(dir.join("contour.png"))?, true)?)?;
        Ok(Self {
            image,
            sketch,
            contour,
            regions: meta.regions,
            camera: meta.camera,
            face_params: meta.face_params,
            seed: meta.seed,
        })
    }

    /// The same head mirrored and seen from the mirrored camera.
    pub fn mirrored(&self) -> Sample {
        sample_from_params(self.face_params.mirror(), self.camera.mirror(), self.image.width, self.seed)
    }
}
