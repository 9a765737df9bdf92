//! Vector-quantized sketch codec and the contour encoder trained against it.
//!
//! A tokenizer downsamples a sketch to a `g × g × d_c` grid, each cell is
//! snapped to its nearest codebook entry, and a decoder maps the quantized
//! grid back to a sketch. A separate contour encoder is trained to land on
//! the same tokens from a sparse contour, so
//! `contour → encoder → quantize → dequantize → decoder` yields a sketch.

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::image::{ContourImage, Image, SketchImage};
use crate::nn::{self, Conv2d, Init, Scope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureDistance {
    L1,
    #[default]
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VqConfig {
    pub resolution: usize,
    /// Spatial reduction from sketch to token grid (power of two).
    pub downsample: usize,
    pub channels: usize,
    pub codebook_size: usize,
    pub code_dim: usize,
    pub beta: f64,
    #[serde(default)]
    pub feature_distance: FeatureDistance,
}

impl Default for VqConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            downsample: 8,
            channels: 32,
            codebook_size: 512,
            code_dim: 64,
            beta: 0.25,
            feature_distance: FeatureDistance::L2,
        }
    }
}

impl VqConfig {
    pub fn grid(&self) -> usize {
        self.resolution / self.downsample
    }

    pub fn validate(&self) -> Result<()> {
        if !self.downsample.is_power_of_two() || self.resolution % self.downsample != 0 || self.grid() == 0 {
            return Err(Error::Config(format!(
                "resolution {} must be a multiple of the power-of-two downsample {}",
                self.resolution, self.downsample
            )));
        }
        if self.codebook_size < 2 {
            return Err(Error::Config("codebook needs at least 2 entries".into()));
        }
        Ok(())
    }
}

/// `g × g` grid of codebook indices for a batch: `tokens[b][y * g + x]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGrid {
    pub grid: usize,
    pub tokens: Vec<Vec<u32>>,
}

impl TokenGrid {
    pub fn batch_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn flat(&self) -> Vec<u32> {
        self.tokens.iter().flatten().copied().collect()
    }

    pub fn validate(&self, codebook_size: usize) -> Result<()> {
        for row in &self.tokens {
            if row.len() != self.grid * self.grid {
                return Err(shape_err(format!("token row of {} for grid {}", row.len(), self.grid)));
            }
            if let Some(&t) = row.iter().find(|&&t| t as usize >= codebook_size) {
                return Err(Error::TokenOutOfRange { index: t, size: codebook_size });
            }
        }
        Ok(())
    }
}

/// Learnable `K × d_c` entry table.
#[derive(Debug, Clone)]
pub struct Codebook {
    entries: Tensor,
}

impl Codebook {
    /// Registers `vq.codebook` under the given (root-level) scope.
    pub fn new(scope: &Scope, size: usize, dim: usize) -> Result<Self> {
        let bound = 1.0 / size as f64;
        let entries = scope.get("codebook", (size, dim), Init::Uniform { lo: -bound, hi: bound })?;
        Ok(Self { entries })
    }

    pub fn from_tensor(entries: Tensor) -> Result<Self> {
        let (k, _) = entries.dims2()?;
        if k < 2 {
            return Err(Error::InvalidInput("codebook needs at least 2 entries".into()));
        }
        Ok(Self { entries })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.entries
    }

    pub fn size(&self) -> usize {
        self.entries.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.entries.dims()[1]
    }

    /// Nearest entry per cell of `z` (`(B, d_c, g, g)`), squared Euclidean
    /// distance, ties to the lowest index. Returns the token grid and the
    /// selected entries laid out like `z`.
    pub fn quantize(&self, z: &Tensor) -> Result<(TokenGrid, Tensor)> {
        let (b, d, g, g2) = z.dims4()?;
        if d != self.dim() || g != g2 {
            return Err(shape_err(format!(
                "latent grid {:?} vs codebook dim {}",
                z.dims(),
                self.dim()
            )));
        }
        let cells = z.permute((0, 2, 3, 1))?.reshape((b * g * g, d))?;
        let cells: Vec<f64> = cells.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        let entries: Vec<f64> = self.entries.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        let flat: Vec<u32> = cells
            .chunks(d)
            .map(|cell| nearest_entry(cell, &entries, d) as u32)
            .collect();
        let tokens = TokenGrid {
            grid: g,
            tokens: flat.chunks(g * g).map(|c| c.to_vec()).collect(),
        };
        let q = self.dequantize(&tokens)?;
        Ok((tokens, q))
    }

    /// Table lookup back to a `(B, d_c, g, g)` feature grid.
    pub fn dequantize(&self, tokens: &TokenGrid) -> Result<Tensor> {
        tokens.validate(self.size())?;
        let g = tokens.grid;
        let b = tokens.batch_size();
        let idx = Tensor::from_vec(tokens.flat(), b * g * g, self.entries.device())?;
        let q = self.entries.index_select(&idx, 0)?;
        Ok(q.reshape((b, g, g, self.dim()))?.permute((0, 3, 1, 2))?.contiguous()?)
    }

    /// Classification logits `-||z_cell - v_k||^2`, `(B·g·g, K)`, with
    /// cells in row-major order per sample.
    pub fn logits(&self, z: &Tensor) -> Result<Tensor> {
        let (b, d, g, _) = z.dims4()?;
        let cells = z.permute((0, 2, 3, 1))?.reshape((b * g * g, d))?;
        let zz = cells.sqr()?.sum_keepdim(1)?;
        let vv = self.entries.sqr()?.sum(1)?.unsqueeze(0)?;
        let cross = cells.matmul(&self.entries.t()?)?;
        Ok((zz.broadcast_add(&vv)? - (cross * 2.0)?)?.neg()?)
    }
}

/// Index of the entry closest to `cell`; strict comparison keeps the first
/// of equidistant entries.
fn nearest_entry(cell: &[f64], entries: &[f64], d: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, e) in entries.chunks(d).enumerate() {
        let dist: f64 = cell.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist < best_d {
            best_d = dist;
            best = k;
        }
    }
    best
}

/// Codebook term `mean(‖sg(z) − q‖²)` and commitment term
/// `β·mean(‖z − sg(q)‖²)`, where `q` is the dequantized grid of `z`.
pub fn vq_regularizers(z: &Tensor, q: &Tensor, beta: f64) -> Result<(Tensor, Tensor)> {
    let codebook = (z.detach() - q)?.sqr()?.mean_all()?;
    let commitment = ((z - q.detach())?.sqr()?.mean_all()? * beta)?;
    Ok((codebook, commitment))
}

/// Identity on the forward pass towards `q`, identity gradient towards `z`.
pub fn straight_through(z: &Tensor, q: &Tensor) -> Result<Tensor> {
    Ok((z + (q - z)?.detach())?)
}

/// `(B, C, H, W)` → `(B, C·p², H/p, W/p)`; channel `c·p² + dy·p + dx`.
pub fn space_to_depth(x: &Tensor, p: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if h % p != 0 || w % p != 0 {
        return Err(shape_err(format!("{h}x{w} not divisible by {p}")));
    }
    let (gh, gw) = (h / p, w / p);
    Ok(x.reshape((b, c, gh, p, gw, p))?.permute((0, 1, 3, 5, 2, 4))?.reshape((b, c * p * p, gh, gw))?)
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space(x: &Tensor, p: usize) -> Result<Tensor> {
    let (b, cp, gh, gw) = x.dims4()?;
    if cp % (p * p) != 0 {
        return Err(shape_err(format!("{cp} channels not divisible by {}", p * p)));
    }
    let c = cp / (p * p);
    Ok(x.reshape((b, c, p, p, gh, gw))?.permute((0, 1, 4, 2, 5, 3))?.reshape((b, c, gh * p, gw * p))?)
}

/// Residual 3×3 conv pair at token-grid resolution.
#[derive(Debug, Clone)]
struct ResBlock {
    a: Conv2d,
    b: Conv2d,
}

impl ResBlock {
    fn new(scope: &Scope, ch: usize) -> Result<Self> {
        Ok(Self {
            a: Conv2d::new(&scope.pp("conv_a"), ch, ch, 3, 1, 1)?,
            b: Conv2d::with_init(&scope.pp("conv_b"), ch, ch, 3, 1, 1, Init::Zeros)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = nn::leaky_relu(&self.a.forward(x)?)?;
        Ok((self.b.forward(&h)? + x)?)
    }
}

/// Patch encoder shared by the sketch tokenizer and the contour encoder:
/// each `p × p` patch is unfolded into channels, then mixed with its
/// neighbours by residual 3×3 convs on the token grid.
#[derive(Debug, Clone)]
pub struct ConvEncoder {
    stem: Conv2d,
    blocks: Vec<ResBlock>,
    out: Conv2d,
    resolution: usize,
    patch: usize,
}

impl ConvEncoder {
    pub fn new(scope: &Scope, cfg: &VqConfig) -> Result<Self> {
        cfg.validate()?;
        let p = cfg.downsample;
        let ch = 4 * cfg.channels;
        let stem = Conv2d::new(&scope.pp("stem"), p * p, ch, 1, 1, 0)?;
        let blocks = (0..BLOCKS).map(|i| ResBlock::new(&scope.pp(format!("block{i}")), ch)).collect::<Result<_>>()?;
        let out = Conv2d::new(&scope.pp("out"), ch, cfg.code_dim, 1, 1, 0)?;
        Ok(Self { stem, blocks, out, resolution: cfg.resolution, patch: p })
    }

    /// `(B, 1, H, H)` in `[0, 1]` → `(B, d_c, g, g)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != 1 || h != self.resolution || w != self.resolution {
            return Err(shape_err(format!(
                "expected (B, 1, {r}, {r}) input, got {:?}",
                x.dims(),
                r = self.resolution
            )));
        }
        let mut x = self.stem.forward(&space_to_depth(&x.affine(2.0, -1.0)?, self.patch)?)?;
        for blk in &self.blocks {
            x = blk.forward(&nn::leaky_relu(&x)?)?;
        }
        self.out.forward(&nn::leaky_relu(&x)?)
    }
}

const BLOCKS: usize = 2;

/// Mirror of [`ConvEncoder`]: residual convs on the token grid, then a
/// 1×1 projection to `p²` pixels per cell folded back into the image.
#[derive(Debug, Clone)]
pub struct SketchDecoder {
    inp: Conv2d,
    blocks: Vec<ResBlock>,
    out: Conv2d,
    code_dim: usize,
    patch: usize,
}

impl SketchDecoder {
    pub fn new(scope: &Scope, cfg: &VqConfig) -> Result<Self> {
        cfg.validate()?;
        let p = cfg.downsample;
        let ch = 4 * cfg.channels;
        let inp = Conv2d::new(&scope.pp("in"), cfg.code_dim, ch, 1, 1, 0)?;
        let blocks = (0..BLOCKS).map(|i| ResBlock::new(&scope.pp(format!("block{i}")), ch)).collect::<Result<_>>()?;
        let out = Conv2d::with_init(&scope.pp("out"), ch, p * p, 1, 1, 0, Init::Zeros)?;
        Ok(Self { inp, blocks, out, code_dim: cfg.code_dim, patch: p })
    }

    /// `(B, d_c, g, g)` → `(B, 1, H, H)`, unbounded. Training applies L1 to
    /// the raw output; the `+1` offset starts it at blank paper.
    pub fn forward(&self, q: &Tensor) -> Result<Tensor> {
        let (_, d, _, _) = q.dims4()?;
        if d != self.code_dim {
            return Err(shape_err(format!("decoder expects {} channels, got {d}", self.code_dim)));
        }
        let mut x = self.inp.forward(q)?;
        for blk in &self.blocks {
            x = blk.forward(&nn::leaky_relu(&x)?)?;
        }
        let px = self.out.forward(&nn::leaky_relu(&x)?)?;
        Ok((depth_to_space(&px, self.patch)? + 1.0)?)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VqLosses {
    pub recon: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContourLosses {
    pub cross_entropy: f64,
    pub distance: f64,
    pub total: f64,
    pub accuracy: f64,
}

/// Tokenizer, codebook and decoder (`vq.tokenizer.*`, `vq.codebook`,
/// `vq.decoder.*`) plus the contour encoder (`vq.contour_encoder.*`).
#[derive(Debug, Clone)]
pub struct SketchCodec {
    pub cfg: VqConfig,
    pub tokenizer: ConvEncoder,
    pub codebook: Codebook,
    pub decoder: SketchDecoder,
    pub contour_encoder: ConvEncoder,
}

/// Graph-carrying terms of one VQ training step.
pub struct VqStep {
    pub loss: Tensor,
    pub recon: Tensor,
    pub codebook: Tensor,
    pub commitment: Tensor,
    pub tokens: TokenGrid,
}

/// Graph-carrying terms of one contour-encoder step.
pub struct ContourStep {
    pub loss: Tensor,
    pub cross_entropy: Tensor,
    pub distance: Tensor,
    pub accuracy: f64,
}

impl SketchCodec {
    /// `scope` is the `vq` prefix.
    pub fn new(scope: &Scope, cfg: VqConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            tokenizer: ConvEncoder::new(&scope.pp("tokenizer"), &cfg)?,
            codebook: Codebook::new(scope, cfg.codebook_size, cfg.code_dim)?,
            decoder: SketchDecoder::new(&scope.pp("decoder"), &cfg)?,
            contour_encoder: ConvEncoder::new(&scope.pp("contour_encoder"), &cfg)?,
        })
    }

    pub fn tokenize(&self, sketches: &Tensor) -> Result<Tensor> {
        self.tokenizer.forward(sketches)
    }

    pub fn encode_contour(&self, contours: &Tensor) -> Result<Tensor> {
        self.contour_encoder.forward(contours)
    }

    /// Decoder output clamped to `[0, 1]`.
    pub fn decode(&self, q: &Tensor) -> Result<Tensor> {
        Ok(self.decoder.forward(q)?.clamp(0.0, 1.0)?)
    }

    /// Sketch → tokenizer → quantize → dequantize → decoder.
    pub fn reconstruct(&self, sketches: &Tensor) -> Result<(TokenGrid, Tensor)> {
        let z = self.tokenize(sketches)?;
        let (tokens, q) = self.codebook.quantize(&z)?;
        Ok((tokens, self.decode(&q)?))
    }

    /// Contour → contour encoder → quantize → dequantize → decoder.
    pub fn contour_to_sketch_tensor(&self, contours: &Tensor) -> Result<(TokenGrid, Tensor)> {
        let z = self.encode_contour(contours)?;
        let (tokens, q) = self.codebook.quantize(&z)?;
        Ok((tokens, self.decode(&q)?))
    }

    pub fn contour_to_sketch(&self, contour: &ContourImage) -> Result<SketchImage> {
        let dtype = self.codebook.tensor().dtype();
        let x = contour.image().to_tensor(dtype, &Device::Cpu)?;
        let (_, s) = self.contour_to_sketch_tensor(&x)?;
        SketchImage::new(Image::from_tensor(&s)?.clamp01())
    }

    /// Reconstruction L1 + codebook + β·commitment, with a straight-through
    /// quantizer.
    pub fn vq_step(&self, sketches: &Tensor) -> Result<VqStep> {
        let z = self.tokenize(sketches)?;
        let (tokens, q) = self.codebook.quantize(&z)?;
        let recon_img = self.decoder.forward(&straight_through(&z, &q)?)?;
        let recon = (recon_img - sketches)?.abs()?.mean_all()?;
        let (codebook, commitment) = vq_regularizers(&z, &q, self.cfg.beta)?;
        let loss = ((&recon + &codebook)? + &commitment)?;
        Ok(VqStep { loss, recon, codebook, commitment, tokens })
    }

    pub fn vq_losses(&self, sketches: &Tensor) -> Result<VqLosses> {
        let s = self.vq_step(sketches)?;
        Ok(VqLosses {
            recon: scalar(&s.recon)?,
            codebook: scalar(&s.codebook)?,
            commitment: scalar(&s.commitment)?,
            total: scalar(&s.loss)?,
        })
    }

    /// Teacher tokens `q(T_S(S))` and their dequantized features, detached.
    pub fn teacher(&self, sketches: &Tensor) -> Result<(TokenGrid, Tensor)> {
        let z = self.tokenize(sketches)?.detach();
        let (tokens, q) = self.codebook.quantize(&z)?;
        Ok((tokens, q.detach()))
    }

    /// Cross-entropy against teacher tokens (logits are negative squared
    /// distances to the frozen codebook) plus a feature distance to the
    /// dequantized teacher features.
    pub fn contour_step(&self, contours: &Tensor, sketches: &Tensor) -> Result<ContourStep> {
        let (tokens, target) = self.teacher(sketches)?;
        let z = self.encode_contour(contours)?;
        contour_objective(&Codebook::from_tensor(self.codebook.tensor().detach())?, &z, &tokens, &target, self.cfg.feature_distance)
    }

    pub fn contour_losses(&self, contours: &Tensor, sketches: &Tensor) -> Result<ContourLosses> {
        let s = self.contour_step(contours, sketches)?;
        Ok(ContourLosses {
            cross_entropy: scalar(&s.cross_entropy)?,
            distance: scalar(&s.distance)?,
            total: scalar(&s.loss)?,
            accuracy: s.accuracy,
        })
    }
}

/// Contour objective for a student grid `z` against teacher tokens and
/// dequantized teacher features.
pub fn contour_objective(
    codebook: &Codebook,
    z: &Tensor,
    tokens: &TokenGrid,
    target: &Tensor,
    distance: FeatureDistance,
) -> Result<ContourStep> {
    let logits = codebook.logits(z)?;
    let labels = Tensor::from_vec(tokens.flat(), logits.dim(0)?, z.device())?;
    let log_probs = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
    let picked = log_probs.gather(&labels.unsqueeze(1)?, 1)?;
    let cross_entropy = picked.mean_all()?.neg()?;
    let diff = (z - target)?;
    let distance = match distance {
        FeatureDistance::L2 => diff.sqr()?.mean_all()?,
        FeatureDistance::L1 => diff.abs()?.mean_all()?,
    };
    let predicted = logits.argmax(D::Minus1)?.to_vec1::<u32>()?;
    let hits = predicted.iter().zip(tokens.flat()).filter(|(a, b)| **a == *b).count();
    let accuracy = hits as f64 / predicted.len().max(1) as f64;
    let loss = (&cross_entropy + &distance)?;
    Ok(ContourStep { loss, cross_entropy, distance, accuracy })
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_tensor(cells: &[Vec<f64>], g: usize) -> Tensor {
        // cells in row-major (y, x) order, each of length d
        let d = cells[0].len();
        let flat: Vec<f64> = cells.iter().flatten().copied().collect();
        Tensor::from_vec(flat, (1, g, g, d), &Device::Cpu)
            .unwrap()
            .permute((0, 3, 1, 2))
            .unwrap()
            .contiguous()
            .unwrap()
    }

    fn book(entries: &[[f64; 2]]) -> Codebook {
        let flat: Vec<f64> = entries.iter().flatten().copied().collect();
        Codebook::from_tensor(Tensor::from_vec(flat, (entries.len(), 2), &Device::Cpu).unwrap()).unwrap()
    }

    #[test]
    fn nearest_of_two() {
        let cb = book(&[[0.0, 0.0], [1.0, 1.0]]);
        let (t, _) = cb.quantize(&grid_tensor(&[vec![0.2, 0.1]], 1)).unwrap();
        assert_eq!(t.tokens, vec![vec![0]]);
    }

    #[test]
    fn exact_hit_has_zero_error() {
        let cb = book(&[[0.0, 0.0], [1.0, 1.0], [0.5, -2.0]]);
        let z = grid_tensor(&[vec![0.5, -2.0]], 1);
        let (t, q) = cb.quantize(&z).unwrap();
        assert_eq!(t.tokens, vec![vec![2]]);
        let err: f64 = (q - z).unwrap().abs().unwrap().sum_all().unwrap().to_scalar().unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let cb = book(&[[5.0, 5.0], [1.0, 0.0], [9.0, 9.0], [-1.0, 0.0]]);
        let (t, _) = cb.quantize(&grid_tensor(&[vec![0.0, 0.0]], 1)).unwrap();
        assert_eq!(t.tokens, vec![vec![1]]);
    }

    #[test]
    fn dequantize_round_trip_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = 7;
        let entries: Vec<f64> = (0..k * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cb = Codebook::from_tensor(Tensor::from_vec(entries.clone(), (k, 3), &Device::Cpu).unwrap()).unwrap();
        let tokens = TokenGrid {
            grid: 2,
            tokens: vec![(0..4).map(|_| rng.gen_range(0..k as u32)).collect()],
        };
        let q = cb.dequantize(&tokens).unwrap();
        // direct indexing oracle
        let qv: Vec<f64> = q.permute((0, 2, 3, 1)).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        for (cell, &tok) in tokens.tokens[0].iter().enumerate() {
            for ch in 0..3 {
                assert_eq!(qv[cell * 3 + ch], entries[tok as usize * 3 + ch]);
            }
        }
        let (again, _) = cb.quantize(&q).unwrap();
        assert_eq!(again, tokens);
        let single = TokenGrid { grid: 2, tokens: vec![vec![4; 4]] };
        let qs: Vec<f64> = cb.dequantize(&single).unwrap().permute((0, 2, 3, 1)).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        for cell in qs.chunks(3) {
            assert_eq!(cell, &entries[12..15]);
        }
        let bad = TokenGrid { grid: 1, tokens: vec![vec![k as u32]] };
        assert!(matches!(cb.dequantize(&bad), Err(Error::TokenOutOfRange { .. })));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let cb = book(&[[0.0, 0.0], [1.0, 1.0]]);
        let z = Tensor::zeros((1, 3, 2, 2), DType::F64, &Device::Cpu).unwrap();
        assert!(cb.quantize(&z).is_err());
    }

    #[test]
    fn hand_computed_vq_terms() {
        // one cell z = (0.2, 0.1), entries {(0,0), (1,1)} -> entry 0
        let cb = book(&[[0.0, 0.0], [1.0, 1.0]]);
        let z = grid_tensor(&[vec![0.2, 0.1]], 1);
        let (_, q) = cb.quantize(&z).unwrap();
        let codebook: f64 = (z.detach() - &q).unwrap().sqr().unwrap().mean_all().unwrap().to_scalar().unwrap();
        // (0.04 + 0.01) / 2
        assert!((codebook - 0.025).abs() < 1e-15);
        let commit = ((z - q.detach()).unwrap().sqr().unwrap().mean_all().unwrap() * 0.25).unwrap();
        assert!((commit.to_scalar::<f64>().unwrap() - 0.00625).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_contour_terms() {
        // K = 2 entries (0,0), (1,1); student z = (0.2, 0.1); teacher token 1
        let cb = book(&[[0.0, 0.0], [1.0, 1.0]]);
        let z = grid_tensor(&[vec![0.2, 0.1]], 1);
        let tokens = TokenGrid { grid: 1, tokens: vec![vec![1]] };
        let target = grid_tensor(&[vec![1.0, 1.0]], 1);
        let s = contour_objective(&cb, &z, &tokens, &target, FeatureDistance::L2).unwrap();
        // logits: -0.05, -(0.64 + 0.81) = -1.45
        let l0: f64 = -0.05;
        let l1: f64 = -1.45;
        let ce = -(l1 - (l0.exp() + l1.exp()).ln());
        assert!((scalar(&s.cross_entropy).unwrap() - ce).abs() < 1e-12);
        assert!((scalar(&s.distance).unwrap() - (0.64 + 0.81) / 2.0).abs() < 1e-12);
        assert_eq!(s.accuracy, 0.0);
        // student exactly on the teacher feature
        let s = contour_objective(&cb, &target, &tokens, &target, FeatureDistance::L2).unwrap();
        assert_eq!(scalar(&s.distance).unwrap(), 0.0);
        let ce_min = (1.0 + (-2.0f64).exp()).ln();
        assert!((scalar(&s.cross_entropy).unwrap() - ce_min).abs() < 1e-12);
        assert_eq!(s.accuracy, 1.0);
    }

    #[test]
    fn space_to_depth_layout() {
        let x = Tensor::arange(0f32, 32.0, &Device::Cpu).unwrap().reshape((1, 2, 4, 4)).unwrap();
        let y = space_to_depth(&x, 2).unwrap();
        assert_eq!(y.dims(), &[1, 8, 2, 2]);
        // channel c*4 + dy*2 + dx at cell (gy, gx) holds x[c, 2gy+dy, 2gx+dx]
        let v: Vec<Vec<Vec<f32>>> = y.squeeze(0).unwrap().to_vec3().unwrap();
        assert_eq!(v[1][1][0], 9.0);
        assert_eq!(v[7][1][1], 31.0);
        let back = depth_to_space(&y, 2).unwrap();
        assert_eq!(back.flatten_all().unwrap().to_vec1::<f32>().unwrap(), x.flatten_all().unwrap().to_vec1::<f32>().unwrap());
        assert!(space_to_depth(&x, 3).is_err());
    }

    #[test]
    fn codec_shapes_and_ranges() {
        let store = ParamStore::new(DType::F32, 0);
        let cfg = VqConfig { codebook_size: 16, code_dim: 8, channels: 8, ..Default::default() };
        let codec = SketchCodec::new(&store.root().pp("vq"), cfg).unwrap();
        let blank = SketchImage::blank(64).image().to_tensor(DType::F32, &Device::Cpu).unwrap();
        let z = codec.tokenize(&blank).unwrap();
        assert_eq!(z.dims(), &[1, 8, 8, 8]);
        let zv: Vec<f32> = z.flatten_all().unwrap().to_vec1().unwrap();
        assert!(zv.iter().all(|v| v.is_finite()));
        let (tokens, s) = codec.reconstruct(&blank).unwrap();
        assert_eq!(tokens.grid, 8);
        assert_eq!(s.dims(), &[1, 1, 64, 64]);
        let sv: Vec<f32> = s.flatten_all().unwrap().to_vec1().unwrap();
        assert!(sv.iter().all(|v| (0.0..=1.0).contains(v)));
        let sketch = codec.contour_to_sketch(&ContourImage::blank(64)).unwrap();
        let again = codec.contour_to_sketch(&ContourImage::blank(64)).unwrap();
        assert_eq!(sketch, again);
        assert!(codec.tokenize(&SketchImage::blank(32).image().to_tensor(DType::F32, &Device::Cpu).unwrap()).is_err());
        assert!(store.get("vq.codebook").is_some());
        assert!(store.names().iter().any(|n| n.starts_with("vq.contour_encoder.")));
    }

    #[test]
    fn losses_nonnegative() {
        let store = ParamStore::new(DType::F32, 0);
        let cfg = VqConfig { resolution: 32, codebook_size: 8, code_dim: 4, channels: 4, ..Default::default() };
        let codec = SketchCodec::new(&store.root().pp("vq"), cfg).unwrap();
        let x = Tensor::rand(0f32, 1f32, (2, 1, 32, 32), &Device::Cpu).unwrap();
        let l = codec.vq_losses(&x).unwrap();
        assert!(l.recon >= 0.0 && l.codebook >= 0.0 && l.commitment >= 0.0);
        assert!((l.total - (l.recon + l.codebook + l.commitment)).abs() < 1e-5);
        let c = codec.contour_losses(&x, &x).unwrap();
        assert!(c.cross_entropy >= 0.0 && c.distance >= 0.0);
    }
}
