//! Morphological contour extraction from detailed sketches.

use crate::image::{ContourImage, Image, SketchImage};

/// Minimum skeleton extent of a kept stroke, as a fraction of the side.
pub const LENGTH_FRACTION: f64 = 0.15;

fn dilate(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    out[yy * w + xx] = true;
                }
            }
        }
    }
    out
}

/// Zhang-Suen thinning to a one-pixel-wide 8-connected skeleton.
pub fn thin(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut m = mask.to_vec();
    let at = |m: &[bool], y: i64, x: i64| -> u8 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0
        } else {
            m[y as usize * w + x as usize] as u8
        }
    };
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    if at(&m, y, x) == 0 {
                        continue;
                    }
                    // P2..P9 clockwise from north
                    let n = [
                        at(&m, y - 1, x),
                        at(&m, y - 1, x + 1),
                        at(&m, y, x + 1),
                        at(&m, y + 1, x + 1),
                        at(&m, y + 1, x),
                        at(&m, y + 1, x - 1),
                        at(&m, y, x - 1),
                        at(&m, y - 1, x - 1),
                    ];
                    let b: u8 = n.iter().sum();
                    let a = (0..8).filter(|&i| n[i] == 0 && n[(i + 1) % 8] == 1).count();
                    let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
                    let cond = if pass == 0 {
                        p2 * p4 * p6 == 0 && p4 * p6 * p8 == 0
                    } else {
                        p2 * p4 * p8 == 0 && p2 * p6 * p8 == 0
                    };
                    if (2..=6).contains(&b) && a == 1 && cond {
                        remove.push(y as usize * w + x as usize);
                    }
                }
            }
            changed |= !remove.is_empty();
            for i in remove {
                m[i] = false;
            }
        }
        if !changed {
            return m;
        }
    }
}

/// 8-connected component labels (`0` = unlabeled) and the label count.
fn label(mask: &[bool], h: usize, w: usize) -> (Vec<usize>, usize) {
    let mut labels = vec![0usize; h * w];
    let mut next = 0;
    for start in 0..h * w {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    let j = yy * w + xx;
                    if mask[j] && labels[j] == 0 {
                        labels[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
    }
    (labels, next)
}

/// Keeps only long strokes: ink is dilated, thinned and split into
/// connected components; components whose skeleton spans less than
/// `0.15·H` along its longer bounding-box side are dropped. The result
/// holds the original ink pixels of the surviving components.
pub fn simplify_sketch(sketch: &SketchImage) -> ContourImage {
    let h = sketch.size();
    let w = h;
    let ink: Vec<bool> = (0..h * w).map(|i| sketch.is_ink(i / w, i % w)).collect();
    let grown = dilate(&ink, h, w);
    let skeleton = thin(&grown, h, w);
    let (labels, count) = label(&grown, h, w);
    let mut bbox = vec![(usize::MAX, usize::MAX, 0usize, 0usize); count + 1];
    for i in 0..h * w {
        if skeleton[i] {
            let b = &mut bbox[labels[i]];
            let (y, x) = (i / w, i % w);
            *b = (b.0.min(y), b.1.min(x), b.2.max(y), b.3.max(x));
        }
    }
    let min_len = LENGTH_FRACTION * h as f64;
    let keep: Vec<bool> = bbox
        .iter()
        .map(|&(y0, x0, y1, x1)| y0 != usize::MAX && ((y1 - y0 + 1).max(x1 - x0 + 1) as f64) >= min_len)
        .collect();
    let mut out = Image::filled(1, h, w, 1.0);
    for i in 0..h * w {
        if ink[i] && keep[labels[i]] {
            out.data[i] = 0.0;
        }
    }
    ContourImage::new(out).expect("square grayscale")
}
