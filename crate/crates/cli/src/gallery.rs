use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::Serialize;
use sssp_core::data::{generate_sample, SampleOptions};

/// Seeds of the bundled contours; fixed so ids survive restarts.
pub const GALLERY_SEEDS: [u64; 10] = [11, 23, 37, 41, 59, 67, 73, 89, 97, 101];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GalleryEntry {
    pub id: String,
    /// Base64 grayscale PNG.
    pub png: String,
}

/// Contours of synthetic portraits across poses and hairstyles.
pub fn build_gallery(resolution: usize) -> sssp_core::Result<Vec<GalleryEntry>> {
    let opts = SampleOptions { resolution, ..Default::default() };
    GALLERY_SEEDS
        .iter()
        .map(|&seed| {
            let s = generate_sample(seed, &opts);
            Ok(GalleryEntry { id: format!("contour-{seed}"), png: STANDARD.encode(s.contour.image().to_png()?) })
        })
        .collect()
}
