use std::sync::atomic::{AtomicUsize, Ordering};

use candle_core::{DType, Device, Tensor};

use crate::encoder::SketchEncoder;
use crate::error::Result;
use crate::generator::{Generator, LatentCode};
use crate::image::{Image, SketchImage};
use crate::nn::ParamStore;
use crate::render::{self, Camera, FeatureImage, RegionSpec, RenderConfig};
use crate::triplane::{PointDecoder, TriPlane};
use crate::vq::SketchCodec;

use super::checkpoint::Checkpoint;
use super::config::{ModelConfig, TrainConfig};

/// Sketch encoder, tri-plane generator and point decoder sharing one
/// parameter store (`encoder.sketch.*`, `generator.*`).
pub struct SsspModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub encoder: SketchEncoder,
    pub generator: Generator,
    pub decoder: PointDecoder,
    encoder_calls: AtomicUsize,
    backbone_calls: AtomicUsize,
}

impl SsspModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        Self::with_store(cfg, ParamStore::new(DType::F32, seed))
    }

    pub fn with_store(cfg: ModelConfig, store: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let root = store.root();
        let encoder = SketchEncoder::new(&root.pp("encoder.sketch"), cfg.encoder())?;
        let generator = Generator::new(&root.pp("generator"), cfg.generator)?;
        let decoder = PointDecoder::new(&root.pp("generator.decoder"), cfg.decoder())?;
        Ok(Self {
            cfg,
            store,
            encoder,
            generator,
            decoder,
            encoder_calls: AtomicUsize::new(0),
            backbone_calls: AtomicUsize::new(0),
        })
    }

    /// Rebuilds the model recorded in a training checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let train: TrainConfig = serde_json::from_value(ck.config.clone())?;
        let store = ParamStore::new(DType::F32, train.seed);
        ck.load_into(&store)?;
        Self::with_store(train.model, store)
    }

    /// Counts of encoder and backbone forward passes since construction.
    pub fn call_counts(&self) -> (usize, usize) {
        (self.encoder_calls.load(Ordering::SeqCst), self.backbone_calls.load(Ordering::SeqCst))
    }

    pub fn render_config(&self) -> RenderConfig {
        self.cfg.render(Camera::DEFAULT_RADIUS)
    }

    pub fn encode(&self, sketches: &Tensor) -> Result<LatentCode> {
        self.encoder_calls.fetch_add(1, Ordering::SeqCst);
        self.encoder.forward(sketches)
    }

    pub fn synthesize(&self, w: &LatentCode) -> Result<TriPlane> {
        self.backbone_calls.fetch_add(1, Ordering::SeqCst);
        self.generator.synthesize(w, None)
    }

    /// Feature images `I_F` at the working resolution, one per camera.
    pub fn render_features(&self, planes: &TriPlane, cams: &[Camera]) -> Result<FeatureImage> {
        render::render(planes, &self.decoder, cams, &self.render_config())
    }

    pub fn render_regions(&self, planes: &TriPlane, cams: &[Camera], regions: &[Vec<RegionSpec>]) -> Result<FeatureImage> {
        render::render_regions(planes, &self.decoder, cams, regions, &self.render_config())
    }

    /// Super-resolved `I⁺_RGB`.
    pub fn upsample(&self, features: &FeatureImage, w: &LatentCode) -> Result<Tensor> {
        self.generator.upsample(features, w, None)
    }

    /// Final-resolution portrait of a single cached tri-plane and latent.
    /// Touches neither the encoder nor the backbone.
    pub fn view(&self, planes: &TriPlane, w: &LatentCode, cam: &Camera) -> Result<Image> {
        let f = self.render_features(planes, &[*cam])?;
        let out = self.upsample(&f, w)?;
        Ok(Image::from_tensor(&out)?.clamp01())
    }

    pub fn sketch_tensor(sketch: &SketchImage) -> Result<Tensor> {
        sketch.image().to_tensor(DType::F32, &Device::Cpu)
    }

    /// Encode, synthesize and render one sketch.
    pub fn portrait(&self, sketch: &SketchImage, cam: &Camera) -> Result<(Image, TriPlane, LatentCode)> {
        let w = self.encode(&Self::sketch_tensor(sketch)?)?.detach();
        let planes = self.synthesize(&w)?.detach();
        let img = self.view(&planes, &w, cam)?;
        Ok((img, planes, w))
    }
}

/// Rebuilds the sketch codec recorded in a VQ or contour checkpoint.
pub fn load_codec(ck: &Checkpoint) -> Result<SketchCodec> {
    let train: TrainConfig = serde_json::from_value(ck.config.clone())?;
    let store = ParamStore::new(DType::F32, train.seed);
    ck.load_into(&store)?;
    SketchCodec::new(&store.root().pp("vq"), train.vq)
}
