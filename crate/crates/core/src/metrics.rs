//! Image quality metrics: PSNR, SSIM and the CPBD sharpness score.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const PSNR_CAP: f64 = 99.0;

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let n = a.data.len().max(1) as f64;
    let mse: f64 = a.data.iter().zip(&b.data).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / n;
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over all valid `11×11` Gaussian windows (σ = 1.5), averaged
/// over channels. Images smaller than the window use one window covering
/// the largest odd square that fits.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (h, w) = (a.height, a.width);
    let size = 11.min(h).min(w);
    let size = if size % 2 == 0 { size - 1 } else { size };
    if size == 0 {
        return Err(Error::InvalidInput("empty image".into()));
    }
    let g = gaussian_kernel(1.5, size / 2);
    let (c1, c2) = ((0.01f64).powi(2), (0.03f64).powi(2));
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels {
        let pa = a.plane(c);
        let pb = b.plane(c);
        for y0 in 0..=h - size {
            for x0 in 0..=w - size {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..size {
                    for dx in 0..size {
                        let wt = g[dy] * g[dx];
                        let va = pa[(y0 + dy) * w + x0 + dx] as f64;
                        let vb = pb[(y0 + dy) * w + x0 + dx] as f64;
                        ma += wt * va;
                        mb += wt * vb;
                        saa += wt * va * va;
                        sbb += wt * vb * vb;
                        sab += wt * va * vb;
                    }
                }
                let va = saa - ma * ma;
                let vb = sbb - mb * mb;
                let cov = sab - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Separable Gaussian blur with clamped borders. `sigma <= 0` is a copy.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let r = (3.0 * sigma).ceil() as usize;
    let k = gaussian_kernel(sigma, r);
    let (h, w) = (img.height, img.width);
    let mut tmp = img.clone();
    let mut out = img.clone();
    for c in 0..img.channels {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let xx = (x as i64 + i as i64 - r as i64).clamp(0, w as i64 - 1) as usize;
                    acc += kv * img.get(c, y, xx) as f64;
                }
                tmp.set(c, y, x, acc as f32);
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let yy = (y as i64 + i as i64 - r as i64).clamp(0, h as i64 - 1) as usize;
                    acc += kv * tmp.get(c, yy, x) as f64;
                }
                out.set(c, y, x, acc as f32);
            }
        }
    }
    out
}

/// Canny edge map of a single-channel image: Gaussian smoothing (σ = 1),
/// Sobel gradients, non-maximum suppression and hysteresis with thresholds
/// at 10% / 20% of the peak gradient magnitude. Returns the edge mask and
/// the Sobel `(gx, gy)` of the unsmoothed image.
fn canny(plane: &[f64], h: usize, w: usize) -> (Vec<bool>, Vec<f64>, Vec<f64>) {
    let img = Image::from_vec(1, h, w, plane.iter().map(|&v| v as f32).collect()).expect("sized plane");
    let smooth: Vec<f64> = gaussian_blur(&img, 1.0).data.iter().map(|&v| v as f64).collect();
    let sobel = |p: &[f64]| {
        let mut gx = vec![0.0; h * w];
        let mut gy = vec![0.0; h * w];
        for y in 1..h.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                let at = |dy: i64, dx: i64| p[((y as i64 + dy) as usize) * w + (x as i64 + dx) as usize];
                gx[y * w + x] = (at(-1, 1) + 2.0 * at(0, 1) + at(1, 1)) - (at(-1, -1) + 2.0 * at(0, -1) + at(1, -1));
                gy[y * w + x] = (at(1, -1) + 2.0 * at(1, 0) + at(1, 1)) - (at(-1, -1) + 2.0 * at(-1, 0) + at(-1, 1));
            }
        }
        (gx, gy)
    };
    let (sx, sy) = sobel(&smooth);
    let mag: Vec<f64> = sx.iter().zip(&sy).map(|(a, b)| a.hypot(*b)).collect();
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    let mut edges = vec![false; h * w];
    if peak <= 1e-12 {
        let (gx, gy) = sobel(plane);
        return (edges, gx, gy);
    }
    let (lo, hi) = (0.1 * peak, 0.2 * peak);
    let mut cand = vec![0u8; h * w];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            let m = mag[i];
            if m < lo {
                continue;
            }
            let angle = sy[i].atan2(sx[i]).to_degrees().rem_euclid(180.0);
            let (dy, dx): (i64, i64) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let n1 = mag[((y as i64 + dy) as usize) * w + (x as i64 + dx) as usize];
            let n2 = mag[((y as i64 - dy) as usize) * w + (x as i64 - dx) as usize];
            if m >= n1 && m >= n2 {
                cand[i] = if m >= hi { 2 } else { 1 };
            }
        }
    }
    let mut stack: Vec<usize> = (0..h * w).filter(|&i| cand[i] == 2).collect();
    while let Some(i) = stack.pop() {
        if edges[i] {
            continue;
        }
        edges[i] = true;
        let (y, x) = ((i / w) as i64, (i % w) as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (yy, xx) = (y + dy, x + dx);
                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                    let j = yy as usize * w + xx as usize;
                    if cand[j] > 0 && !edges[j] {
                        stack.push(j);
                    }
                }
            }
        }
    }
    let (gx, gy) = sobel(plane);
    (edges, gx, gy)
}

/// Marziliano edge width along the row through `(y, x)`: distance between
/// the intensity extrema on either side of the edge.
fn edge_width(plane: &[f64], w: usize, y: usize, x: usize, rising: bool) -> f64 {
    let row = &plane[y * w..(y + 1) * w];
    let (mut l, mut r) = (x, x);
    if rising {
        while l > 0 && row[l - 1] < row[l] {
            l -= 1;
        }
        while r + 1 < w && row[r + 1] > row[r] {
            r += 1;
        }
    } else {
        while l > 0 && row[l - 1] > row[l] {
            l -= 1;
        }
        while r + 1 < w && row[r + 1] < row[r] {
            r += 1;
        }
    }
    (r - l) as f64
}

const CPBD_BETA: f64 = 3.6;
const CPBD_P_JNB: f64 = 0.63;
const CPBD_BLOCK: usize = 64;

/// Cumulative probability of blur detection. The image is converted to
/// grayscale on a `[0, 255]` scale; vertical Canny edges are measured with
/// Marziliano widths and compared against just-noticeable-blur widths of 5
/// (block contrast ≤ 50) or 3. Returns the fraction of edges whose blur
/// probability stays at or below 63%; 0 when the image has no edges.
pub fn cpbd(img: &Image) -> Result<f64> {
    let gray = img.to_gray();
    let (h, w) = (gray.height, gray.width);
    let plane: Vec<f64> = gray.data.iter().map(|&v| v as f64 * 255.0).collect();
    let (edges, gx, gy) = canny(&plane, h, w);
    let block = CPBD_BLOCK.min(h).min(w).max(1);
    let contrast = |y: usize, x: usize| {
        let (by, bx) = ((y / block) * block, (x / block) * block);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for yy in by..(by + block).min(h) {
            for xx in bx..(bx + block).min(w) {
                lo = lo.min(plane[yy * w + xx]);
                hi = hi.max(plane[yy * w + xx]);
            }
        }
        hi - lo
    };
    let mut total = 0usize;
    let mut sharp = 0usize;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !edges[i] || gx[i].abs() < gy[i].abs() || gx[i] == 0.0 {
                continue;
            }
            let width = edge_width(&plane, w, y, x, gx[i] > 0.0);
            let jnb = if contrast(y, x) > 50.0 { 3.0 } else { 5.0 };
            let p_blur = 1.0 - (-(width / jnb).powf(CPBD_BETA)).exp();
            total += 1;
            if p_blur <= CPBD_P_JNB {
                sharp += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { sharp as f64 / total as f64 })
}

/// Flat `name → value` metrics record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricReport(pub BTreeMap<String, f64>);

impl MetricReport {
    pub fn insert(&mut self, key: impl Into<String>, v: f64) {
        self.0.insert(key.into(), v);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.0.get(key).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// PSNR, SSIM and CPBD (of `output`) for one image pair.
pub fn score(output: &Image, target: &Image) -> Result<MetricReport> {
    let mut r = MetricReport::default();
    r.insert("psnr", psnr(output, target)?);
    r.insert("ssim", ssim(output, target)?);
    r.insert("cpbd", cpbd(output)?);
    Ok(r)
}
