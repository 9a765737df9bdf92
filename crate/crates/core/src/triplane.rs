//! Tri-plane feature volumes: three axis-aligned feature grids (xy, xz, yz)
//! spanning the cube `[-e, e]^3`, queried by projecting a point onto each
//! plane, bilinearly interpolating, and summing.
//!
//! Grid samples sit at pixel centers (`u = -e` maps to grid coordinate
//! `-0.5`), so reversing a plane's x axis maps sample positions exactly onto
//! the mirrored positions.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{self, Init, Linear, Scope};

/// Plane order inside a tri-plane tensor.
pub const PLANE_XY: usize = 0;
pub const PLANE_XZ: usize = 1;
pub const PLANE_YZ: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Reflection about the yz-plane.
    pub fn mirror(self) -> Point3 {
        Point3::new(-self.x, self.y, self.z)
    }

    /// In-plane coordinates on the xy, xz and yz planes.
    pub fn project(self) -> [(f64, f64); 3] {
        [(self.x, self.y), (self.x, self.z), (self.y, self.z)]
    }
}

pub fn mirror_point(p: Point3) -> Point3 {
    p.mirror()
}

pub fn project_point(p: Point3) -> [(f64, f64); 3] {
    p.project()
}

/// How the three per-plane features are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
}

/// A batch of tri-planes, stored as one `(B, 3, C, R, R)` tensor.
///
/// For each plane the last axis runs along the first in-plane coordinate
/// (x for xy/xz, y for yz) and the second-to-last along the second one.
#[derive(Debug, Clone)]
pub struct TriPlane {
    planes: Tensor,
    extent: f64,
}

impl TriPlane {
    /// Accepts `(3, C, R, R)` or `(B, 3, C, R, R)`.
    pub fn new(planes: Tensor, extent: f64) -> Result<Self> {
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::InvalidInput(format!("tri-plane extent must be > 0, got {extent}")));
        }
        let planes = match planes.rank() {
            4 => planes.unsqueeze(0)?,
            5 => planes,
            r => return Err(shape_err(format!("tri-plane tensor of rank {r}"))),
        };
        let (_, three, _, r1, r2) = planes.dims5()?;
        if three != 3 || r1 != r2 {
            return Err(shape_err(format!(
                "tri-plane tensor must be (B, 3, C, R, R), got {:?}",
                planes.dims()
            )));
        }
        Ok(Self { planes, extent })
    }

    pub fn constant(values: [&[f64]; 3], resolution: usize, extent: f64) -> Result<Self> {
        let c = values[0].len();
        if values.iter().any(|v| v.len() != c) {
            return Err(shape_err("constant planes need equal channel counts"));
        }
        let mut data = Vec::with_capacity(3 * c * resolution * resolution);
        for plane in values {
            for &v in plane.iter() {
                data.extend(std::iter::repeat(v).take(resolution * resolution));
            }
        }
        let t = Tensor::from_vec(data, (3, c, resolution, resolution), &candle_core::Device::Cpu)?;
        Self::new(t, extent)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.planes
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn batch_size(&self) -> usize {
        self.planes.dims()[0]
    }

    pub fn channels(&self) -> usize {
        self.planes.dims()[2]
    }

    pub fn resolution(&self) -> usize {
        self.planes.dims()[3]
    }

    pub fn dtype(&self) -> DType {
        self.planes.dtype()
    }

    /// The `b`-th tri-plane of the batch.
    pub fn get(&self, b: usize) -> Result<TriPlane> {
        Ok(Self {
            planes: self.planes.narrow(0, b, 1)?,
            extent: self.extent,
        })
    }

    pub fn detach(&self) -> TriPlane {
        Self {
            planes: self.planes.detach(),
            extent: self.extent,
        }
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<TriPlane> {
        Ok(Self {
            planes: self.planes.to_dtype(dtype)?,
            extent: self.extent,
        })
    }

    pub fn is_finite(&self) -> Result<bool> {
        let v = self.planes.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        Ok(v.iter().all(|x| x.is_finite()))
    }

    pub fn same_layout(&self, other: &TriPlane) -> bool {
        self.planes.dims() == other.planes.dims() && self.extent == other.extent
    }

    /// Reverses the x axis of the xy and xz planes; the yz plane is untouched.
    pub fn flip(&self) -> Result<TriPlane> {
        let r = self.resolution();
        let rev: Vec<u32> = (0..r as u32).rev().collect();
        let rev = Tensor::from_vec(rev, r, self.planes.device())?;
        let xy_xz = self.planes.narrow(1, PLANE_XY, 2)?.contiguous()?.index_select(&rev, 4)?;
        let yz = self.planes.narrow(1, PLANE_YZ, 1)?;
        Ok(Self {
            planes: Tensor::cat(&[&xy_xz, &yz], 1)?,
            extent: self.extent,
        })
    }

    /// Continuous grid coordinate of a world coordinate.
    #[inline]
    fn grid_coord(&self, u: f64) -> f64 {
        let r = self.resolution() as f64;
        ((u / self.extent + 1.0) * r - 1.0) * 0.5
    }

    /// Gather indices and weights for a set of points; one row of 12
    /// (plane, corner) taps per point into the flattened `(B*3*R*R, C)` table.
    fn taps(&self, batch_index: &[usize], points: &[Point3]) -> (Vec<u32>, Vec<f64>) {
        let r = self.resolution();
        let mut idx = Vec::with_capacity(points.len() * 12);
        let mut wts = Vec::with_capacity(points.len() * 12);
        for (&b, p) in batch_index.iter().zip(points) {
            for (plane, (u, v)) in p.project().into_iter().enumerate() {
                let base = (b * 3 + plane) * r * r;
                let inside = u.abs() <= self.extent && v.abs() <= self.extent;
                // border-clamped inside the cube, zero outside
                let gx = self.grid_coord(u).clamp(0.0, (r - 1) as f64);
                let gy = self.grid_coord(v).clamp(0.0, (r - 1) as f64);
                let x0 = gx.floor();
                let y0 = gy.floor();
                let tx = gx - x0;
                let ty = gy - y0;
                for (dy, wy) in [(0i64, 1.0 - ty), (1, ty)] {
                    for (dx, wx) in [(0i64, 1.0 - tx), (1, tx)] {
                        let xi = x0 as i64 + dx;
                        let yi = y0 as i64 + dy;
                        let valid = inside && xi >= 0 && yi >= 0 && (xi as usize) < r && (yi as usize) < r;
                        if valid {
                            idx.push((base + yi as usize * r + xi as usize) as u32);
                            wts.push(wx * wy);
                        } else {
                            idx.push(base as u32);
                            wts.push(0.0);
                        }
                    }
                }
            }
        }
        (idx, wts)
    }

    /// Row-major `(B*3*R*R, C)` feature table.
    pub(crate) fn table(&self) -> Result<Tensor> {
        let (b, _, c, r, _) = self.planes.dims5()?;
        Ok(self
            .planes
            .permute((0, 1, 3, 4, 2))?
            .contiguous()?
            .reshape((b * 3 * r * r, c))?)
    }

    /// Differentiable query of many points. `batch_index[i]` selects which
    /// tri-plane of the batch point `i` reads from. Returns `(N, C)`.
    pub fn query_points(
        &self,
        batch_index: &[usize],
        points: &[Point3],
        aggregation: Aggregation,
    ) -> Result<Tensor> {
        self.query_with_table(&self.table()?, batch_index, points, aggregation)
    }

    pub(crate) fn query_with_table(
        &self,
        table: &Tensor,
        batch_index: &[usize],
        points: &[Point3],
        aggregation: Aggregation,
    ) -> Result<Tensor> {
        if batch_index.len() != points.len() {
            return Err(shape_err("batch index / point count mismatch"));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("query point {p:?}")));
        }
        let n = points.len();
        let c = self.channels();
        let (idx, wts) = self.taps(batch_index, points);
        let device = self.planes.device();
        let idx = Tensor::from_vec(idx, n * 12, device)?;
        let wts = Tensor::from_vec(wts, (n, 12, 1), device)?.to_dtype(self.dtype())?;
        let gathered = table.index_select(&idx, 0)?.reshape((n, 12, c))?;
        let summed = gathered.broadcast_mul(&wts)?.sum(1)?;
        Ok(match aggregation {
            Aggregation::Sum => summed,
            Aggregation::Mean => (summed / 3.0)?,
        })
    }

    /// Aggregated feature at a single point of the first tri-plane in the batch.
    pub fn query(&self, p: Point3) -> Result<Vec<f64>> {
        let t = self.query_points(&[0], &[p], Aggregation::Sum)?;
        Ok(t.to_dtype(DType::F64)?.squeeze(0)?.to_vec1::<f64>()?)
    }
}

pub fn query_triplane(f: &TriPlane, p: Point3) -> Result<Vec<f64>> {
    f.query(p)
}

pub fn flip_triplane(f: &TriPlane) -> Result<TriPlane> {
    f.flip()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub in_channels: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    /// Color-feature channels; density is one extra output.
    pub feature_channels: usize,
    pub aggregation: Aggregation,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            in_channels: 32,
            hidden: 64,
            hidden_layers: 2,
            feature_channels: 32,
            aggregation: Aggregation::Sum,
        }
    }
}

/// Small MLP mapping an aggregated tri-plane feature to
/// `(color feature, density)`.
#[derive(Debug, Clone)]
pub struct PointDecoder {
    layers: Vec<Linear>,
    out: Linear,
    cfg: DecoderConfig,
}

impl PointDecoder {
    pub fn new(scope: &Scope, cfg: DecoderConfig) -> Result<Self> {
        let mut layers = Vec::with_capacity(cfg.hidden_layers);
        let mut in_dim = cfg.in_channels;
        for i in 0..cfg.hidden_layers {
            layers.push(Linear::new(&scope.pp(format!("fc{i}")), in_dim, cfg.hidden)?);
            in_dim = cfg.hidden;
        }
        let out = Linear::with_weight_init(
            &scope.pp("out"),
            in_dim,
            cfg.feature_channels + 1,
            Init::Uniform {
                lo: -1.0 / (in_dim as f64).sqrt(),
                hi: 1.0 / (in_dim as f64).sqrt(),
            },
        )?;
        Ok(Self { layers, out, cfg })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    /// `feat`: (N, C_t) -> (color (N, C), sigma (N,)).
    pub fn forward(&self, feat: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut x = feat.clone();
        for l in &self.layers {
            x = nn::softplus(&l.forward(&x)?)?;
        }
        let raw = self.out.forward(&x)?;
        let c = self.cfg.feature_channels;
        let color = ((nn::sigmoid(&raw.narrow(D::Minus1, 0, c)?)? * (1.0 + 2.0 * 0.001))? - 0.001)?;
        let sigma = nn::softplus(&raw.narrow(D::Minus1, c, 1)?.squeeze(D::Minus1)?)?;
        Ok((color, sigma))
    }

    /// Single-feature decode with input validation.
    pub fn decode(&self, feat: &[f64], dtype: DType) -> Result<(Vec<f64>, f64)> {
        if feat.len() != self.cfg.in_channels {
            return Err(shape_err(format!(
                "decoder expects {} channels, got {}",
                self.cfg.in_channels,
                feat.len()
            )));
        }
        if feat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decoder input".into()));
        }
        let t = Tensor::from_slice(feat, (1, feat.len()), &candle_core::Device::Cpu)?.to_dtype(dtype)?;
        let (color, sigma) = self.forward(&t)?;
        let color = color.to_dtype(DType::F64)?.squeeze(0)?.to_vec1::<f64>()?;
        let sigma = sigma.to_dtype(DType::F64)?.to_vec1::<f64>()?[0];
        Ok((color, sigma))
    }
}

pub fn decode_point(dec: &PointDecoder, feat: &[f64]) -> Result<(Vec<f64>, f64)> {
    dec.decode(feat, DType::F64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::Device;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_triplane(rng: &mut ChaCha8Rng, c: usize, r: usize) -> (TriPlane, Vec<f64>) {
        let data: Vec<f64> = (0..3 * c * r * r).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = Tensor::from_vec(data.clone(), (3, c, r, r), &Device::Cpu).unwrap();
        (TriPlane::new(t, 1.0).unwrap(), data)
    }

    /// Tent-kernel sum over every grid sample: an interpolation written
    /// without floor/corner bookkeeping.
    fn oracle_query(data: &[f64], c: usize, r: usize, e: f64, p: Point3) -> Vec<f64> {
        let mut out = vec![0.0; c];
        for (plane, (u, v)) in p.project().into_iter().enumerate() {
            if u.abs() > e || v.abs() > e {
                continue;
            }
            // sample (i, j) sits at world coordinate -e + (j + 0.5) * 2e / r
            let cell = 2.0 * e / r as f64;
            let (u, v) = (u.clamp(-e + cell / 2.0, e - cell / 2.0), v.clamp(-e + cell / 2.0, e - cell / 2.0));
            for i in 0..r {
                for j in 0..r {
                    let sx = -e + (j as f64 + 0.5) * cell;
                    let sy = -e + (i as f64 + 0.5) * cell;
                    let wx = (1.0 - ((u - sx) / cell).abs()).max(0.0);
                    let wy = (1.0 - ((v - sy) / cell).abs()).max(0.0);
                    if wx * wy == 0.0 {
                        continue;
                    }
                    for ch in 0..c {
                        out[ch] += wx * wy * data[((plane * c + ch) * r + i) * r + j];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn projection_selects_coordinates() {
        assert_eq!(project_point(Point3::ORIGIN), [(0.0, 0.0); 3]);
        assert_eq!(
            project_point(Point3::new(0.5, -0.2, 0.1)),
            [(0.5, -0.2), (0.5, 0.1), (-0.2, 0.1)]
        );
        assert_eq!(
            project_point(Point3::new(-0.5, -0.2, 0.1)),
            [(-0.5, -0.2), (-0.5, 0.1), (-0.2, 0.1)]
        );
    }

    #[test]
    fn mirror_point_cases() {
        assert_eq!(mirror_point(Point3::new(0.0, 1.0, 2.0)), Point3::new(0.0, 1.0, 2.0));
        assert_eq!(mirror_point(Point3::new(1.0, 0.0, 0.0)), Point3::new(-1.0, 0.0, 0.0));
        let p = Point3::new(0.3, -0.7, 0.2);
        assert_eq!(mirror_point(mirror_point(p)), p);
    }

    #[test]
    fn constant_planes_sum() {
        let f = TriPlane::constant([&[1.0, 2.0], &[10.0, 20.0], &[100.0, 200.0]], 8, 1.0).unwrap();
        for p in [Point3::ORIGIN, Point3::new(0.9, -0.4, 0.3), Point3::new(-0.2, 0.1, -0.8)] {
            let q = f.query(p).unwrap();
            assert!((q[0] - 111.0).abs() < 1e-12 && (q[1] - 222.0).abs() < 1e-12, "{q:?}");
        }
    }

    #[test]
    fn outside_cube_is_zero() {
        let f = TriPlane::constant([&[1.0], &[1.0], &[1.0]], 8, 1.0).unwrap();
        assert_eq!(f.query(Point3::new(1.5, 1.5, 1.5)).unwrap(), vec![0.0]);
        // outside on xy and xz only: yz still contributes
        let q = f.query(Point3::new(1.5, 0.0, 0.0)).unwrap();
        assert!((q[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn query_matches_tent_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (f, data) = random_triplane(&mut rng, 3, 7);
            let p = Point3::new(
                rng.gen_range(-1.05..1.05),
                rng.gen_range(-1.05..1.05),
                rng.gen_range(-1.05..1.05),
            );
            let got = f.query(p).unwrap();
            let want = oracle_query(&data, 3, 7, 1.0, p);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "{p:?}: {got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn flip_is_involution_and_keeps_yz() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (f, _) = random_triplane(&mut rng, 2, 5);
        let ff = f.flip().unwrap().flip().unwrap();
        let a: Vec<f64> = f.tensor().flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f64> = ff.tensor().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
        let yz0: Vec<f64> = f.tensor().narrow(1, 2, 1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let yz1: Vec<f64> = f.flip().unwrap().tensor().narrow(1, 2, 1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(yz0, yz1);
        let constant = TriPlane::constant([&[1.0], &[2.0], &[3.0]], 4, 1.0).unwrap();
        let c0: Vec<f64> = constant.tensor().flatten_all().unwrap().to_vec1().unwrap();
        let c1: Vec<f64> = constant.flip().unwrap().tensor().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(c0, c1);
    }

    #[test]
    fn mirror_query_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (f, _) = random_triplane(&mut rng, 4, 16);
            let p = Point3::new(rng.gen_range(-1.1..1.1), rng.gen_range(-1.1..1.1), rng.gen_range(-1.1..1.1));
            let a = f.query(p).unwrap();
            let b = f.flip().unwrap().query(p.mirror()).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn decoder_is_deterministic_and_nonnegative() {
        let store = ParamStore::new(DType::F64, 1);
        let cfg = DecoderConfig { in_channels: 4, feature_channels: 3, ..Default::default() };
        let dec = PointDecoder::new(&store.root().pp("dec"), cfg).unwrap();
        let feat = [0.3, -2.0, 5.0, 0.0];
        let a = decode_point(&dec, &feat).unwrap();
        let b = decode_point(&dec, &feat).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let f: Vec<f64> = (0..4).map(|_| rng.gen_range(-50.0..50.0)).collect();
            assert!(decode_point(&dec, &f).unwrap().1 >= 0.0);
        }
        assert!(decode_point(&dec, &[f64::NAN, 0.0, 0.0, 0.0]).is_err());
        assert!(decode_point(&dec, &[0.0; 3]).is_err());
    }

    #[test]
    fn zero_output_layer_gives_softplus_zero_density() {
        let store = ParamStore::new(DType::F64, 1);
        let cfg = DecoderConfig { in_channels: 4, feature_channels: 3, ..Default::default() };
        let dec = PointDecoder::new(&store.root().pp("dec"), cfg).unwrap();
        store.insert("dec.out.weight", &Tensor::zeros((4, 64), DType::F64, &Device::Cpu).unwrap()).unwrap();
        store.insert("dec.out.bias", &Tensor::zeros(4, DType::F64, &Device::Cpu).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let f: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (color, sigma) = decode_point(&dec, &f).unwrap();
            assert!((sigma - std::f64::consts::LN_2).abs() < 1e-12);
            assert!(color.iter().all(|c| (c - 0.5).abs() < 1e-12));
        }
    }
}
