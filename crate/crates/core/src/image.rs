//! Planar (channel-major) float images and the grayscale newtypes used for
//! sketches and contours.

use std::io::Cursor;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// A `channels × height × width` image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(shape_err(format!(
                "image buffer has {} values, expected {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(shape_err(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.channels, self.height, self.width, other.channels, other.height, other.width
            )))
        }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn hflip(&self) -> Image {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, x, self.get(c, y, self.width - 1 - x));
                }
            }
        }
        out
    }

    /// Luma (Rec. 601) for 3-channel images; identity for 1-channel.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let mut out = Image::new(1, self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                let v = 0.299 * self.get(0, y, x) + 0.587 * self.get(1, y, x) + 0.114 * self.get(2, y, x);
                out.set(0, y, x, v);
            }
        }
        out
    }

    /// Box-filter downsampling by an integer factor.
    pub fn area_downsample(&self, factor: usize) -> Result<Image> {
        if factor == 0 || self.height % factor != 0 || self.width % factor != 0 {
            return Err(shape_err(format!(
                "cannot area-downsample {}x{} by {factor}",
                self.height, self.width
            )));
        }
        let (h, w) = (self.height / factor, self.width / factor);
        let mut out = Image::new(self.channels, h, w);
        let norm = 1.0 / (factor * factor) as f32;
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += self.get(c, y * factor + dy, x * factor + dx);
                        }
                    }
                    out.set(c, y, x, acc * norm);
                }
            }
        }
        Ok(out)
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integer + 0.5), clamping to the border.
    pub fn sample_bilinear(&self, c: usize, px: f64, py: f64) -> f32 {
        let fx = (px - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (py - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = (fx - x0 as f64) as f32;
        let ty = (fy - y0 as f64) as f32;
        let top = self.get(c, y0, x0) * (1.0 - tx) + self.get(c, y0, x1) * tx;
        let bot = self.get(c, y1, x0) * (1.0 - tx) + self.get(c, y1, x1) * tx;
        top * (1.0 - ty) + bot * ty
    }

    /// Crops the box `[u0, u0+span] × [v0, v0+span]` (normalized coordinates)
    /// and resamples it to `size × size`, sampling at the output pixel centers.
    pub fn crop_resize(&self, u0: f64, v0: f64, span: f64, size: usize) -> Image {
        let mut out = Image::new(self.channels, size, size);
        for c in 0..self.channels {
            for y in 0..size {
                for x in 0..size {
                    let u = u0 + span * (x as f64 + 0.5) / size as f64;
                    let v = v0 + span * (y as f64 + 0.5) / size as f64;
                    out.set(c, y, x, self.sample_bilinear(c, u * self.width as f64, v * self.height as f64));
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp01(&self) -> Image {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        out
    }

    /// `(1, C, H, W)` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.data, (1, self.channels, self.height, self.width), device)?
            .to_dtype(dtype)?)
    }

    /// Accepts `(C, H, W)` or `(1, C, H, W)`.
    pub fn from_tensor(t: &Tensor) -> Result<Image> {
        let t = match t.rank() {
            4 => t.squeeze(0)?,
            3 => t.clone(),
            r => return Err(shape_err(format!("image tensor of rank {r}"))),
        };
        let (c, h, w) = t.dims3()?;
        let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Image::from_vec(c, h, w, data)
    }

    /// Stacks same-shape images into a `(B, C, H, W)` tensor.
    pub fn batch_tensor(images: &[&Image], dtype: DType, device: &Device) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidInput("empty image batch".into()))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for im in images {
            first.ensure_same_shape(im)?;
            data.extend_from_slice(&im.data);
        }
        Ok(Tensor::from_vec(
            data,
            (images.len(), first.channels, first.height, first.width),
            device,
        )?
        .to_dtype(dtype)?)
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        match self.channels {
            1 => {
                let raw: Vec<u8> = self.data.iter().map(|&v| q(v)).collect();
                let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
                    .ok_or_else(|| shape_err("gray buffer"))?;
                img.write_to(&mut Cursor::new(&mut buf), image::ImageFormat::Png)?;
            }
            3 => {
                let mut raw = Vec::with_capacity(self.height * self.width * 3);
                for y in 0..self.height {
                    for x in 0..self.width {
                        for c in 0..3 {
                            raw.push(q(self.get(c, y, x)));
                        }
                    }
                }
                let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
                    .ok_or_else(|| shape_err("rgb buffer"))?;
                img.write_to(&mut Cursor::new(&mut buf), image::ImageFormat::Png)?;
            }
            c => return Err(shape_err(format!("cannot encode {c}-channel image as PNG"))),
        }
        Ok(buf)
    }

    /// Decodes a PNG; `gray` selects luma conversion, otherwise RGB.
    pub fn from_png(bytes: &[u8], gray: bool) -> Result<Image> {
        let dynimg = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
        let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
        if gray {
            let g = dynimg.to_luma8();
            let data = g.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
            Image::from_vec(1, h, w, data)
        } else {
            let rgb = dynimg.to_rgb8();
            let mut out = Image::new(3, h, w);
            for (i, px) in rgb.pixels().enumerate() {
                let (y, x) = (i / w, i % w);
                for c in 0..3 {
                    out.set(c, y, x, px[c] as f32 / 255.0);
                }
            }
            Ok(out)
        }
    }

    pub fn save_png(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_png()?)?;
        Ok(())
    }
}

macro_rules! gray_newtype {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(Image);

        impl $name {
            /// Validates a single-channel, square image with values in `[0, 1]`.
            pub fn new(image: Image) -> Result<Self> {
                if image.channels != 1 {
                    return Err(shape_err(format!("expected 1 channel, got {}", image.channels)));
                }
                if image.height != image.width {
                    return Err(shape_err(format!(
                        "expected a square image, got {}x{}",
                        image.height, image.width
                    )));
                }
                if let Some(v) = image.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::InvalidInput(format!("pixel value {v} outside [0, 1]")));
                }
                Ok(Self(image))
            }

            /// All-paper image.
            pub fn blank(size: usize) -> Self {
                Self(Image::filled(1, size, size, 1.0))
            }

            pub fn size(&self) -> usize {
                self.0.height
            }

            pub fn image(&self) -> &Image {
                &self.0
            }

            pub fn into_image(self) -> Image {
                self.0
            }

            pub fn hflip(&self) -> Self {
                Self(self.0.hflip())
            }

            /// Pixels darker than mid-gray.
            pub fn ink_count(&self) -> usize {
                self.0.data.iter().filter(|&&v| v < 0.5).count()
            }

            pub fn is_ink(&self, y: usize, x: usize) -> bool {
                self.0.get(0, y, x) < 0.5
            }
        }
    };
}

gray_newtype!(
    /// A detailed line drawing: 0 is ink, 1 is paper.
    SketchImage
);
gray_newtype!(
    /// A sparse outline drawing: 0 is ink, 1 is paper.
    ContourImage
);
