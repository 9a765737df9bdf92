//! Sketch-conditioned, 3D-aware portrait generation on tri-plane radiance
//! fields.
//!
//! Pipeline: a coarse contour is lifted to a detailed sketch through a
//! vector-quantized sketch codec ([`vq`]), the sketch is encoded to a latent
//! code ([`encoder`]), the latent drives a style-modulated generator that
//! emits a tri-plane ([`generator`], [`triplane`]), and the tri-plane is
//! volume rendered from any orbit camera ([`render`]).

pub mod data;
pub mod encoder;
pub mod error;
pub mod generator;
pub mod harness;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod render;
pub mod triplane;
pub mod vq;

pub use error::{Error, Result};
pub use image::{ContourImage, Image, SketchImage};
pub use render::{Camera, FeatureImage, RegionKind, RegionSpec, RenderConfig};
pub use triplane::{Point3, PointDecoder, TriPlane};
