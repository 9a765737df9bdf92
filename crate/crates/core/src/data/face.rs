//! Procedural cartoon heads rendered by analytic ray casting.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::render::{Camera, Ray};
use crate::triplane::Point3;

/// Parameters of one head. Lengths are in world units inside `[-1, 1]^3`;
/// the face looks down +y, +z is up. "Left" features sit at +x, which is
/// the left side of a frontal image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceParams {
    pub head_radii: [f64; 3],
    pub eye_separation: f64,
    pub eye_height: f64,
    pub eye_radius: f64,
    /// Vertical offsets of the left and right eye.
    pub eye_offsets: [f64; 2],
    pub nose_height: f64,
    pub nose_width: f64,
    pub nose_length: f64,
    pub nose_shift: f64,
    pub mouth_height: f64,
    pub mouth_width: f64,
    pub mouth_thickness: f64,
    pub mouth_shift: f64,
    /// Hairline height at the front and at the back of the head.
    pub hair_front: f64,
    pub hair_back: f64,
    pub skin: [f64; 3],
    pub hair: [f64; 3],
    pub symmetric: bool,
}

impl FaceParams {
    pub fn sample<R: Rng>(rng: &mut R, symmetric: bool) -> Self {
        let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
        let head_radii = [u(0.50, 0.60), u(0.52, 0.62), u(0.60, 0.70)];
        let eye_separation = u(0.17, 0.24);
        let eye_height = u(0.06, 0.16);
        let eye_radius = u(0.065, 0.095);
        let nose_height = u(-0.08, 0.0);
        let nose_width = u(0.06, 0.09);
        let nose_length = u(0.08, 0.14);
        let mouth_height = u(-0.34, -0.24);
        let mouth_width = u(0.12, 0.20);
        let mouth_thickness = u(0.03, 0.055);
        let hair_front = u(0.22, 0.45);
        let hair_back = u(-0.45, -0.1);
        let shade = u(0.75, 1.0);
        let skin = [0.95 * shade, 0.75 * shade, u(0.55, 0.7) * shade];
        let hair = [u(0.05, 0.55), u(0.03, 0.35), u(0.02, 0.25)];
        let (eye_offsets, nose_shift, mouth_shift) = if symmetric {
            ([0.0, 0.0], 0.0, 0.0)
        } else {
            ([u(-0.04, 0.04), u(-0.04, 0.04)], u(-0.05, 0.05), u(-0.06, 0.06))
        };
        Self {
            head_radii,
            eye_separation,
            eye_height,
            eye_radius,
            eye_offsets,
            nose_height,
            nose_width,
            nose_length,
            nose_shift,
            mouth_height,
            mouth_width,
            mouth_thickness,
            mouth_shift,
            hair_front,
            hair_back,
            skin,
            hair,
            symmetric,
        }
    }

    /// The x-mirrored head.
    pub fn mirror(&self) -> Self {
        Self {
            eye_offsets: [self.eye_offsets[1], self.eye_offsets[0]],
            nose_shift: -self.nose_shift,
            mouth_shift: -self.mouth_shift,
            ..*self
        }
    }

    /// Depth of the head's front surface at `(x, z)`.
    fn front_y(&self, x: f64, z: f64) -> f64 {
        let [rx, ry, rz] = self.head_radii;
        let s = 1.0 - (x / rx).powi(2) - (z / rz).powi(2);
        ry * s.max(0.0).sqrt()
    }

    pub fn eye_center(&self, left: bool) -> Point3 {
        let (x, dz) = if left {
            (self.eye_separation, self.eye_offsets[0])
        } else {
            (-self.eye_separation, self.eye_offsets[1])
        };
        let z = self.eye_height + dz;
        Point3::new(x, self.front_y(x, z) - 0.45 * self.eye_radius, z)
    }

    pub fn nose_center(&self) -> Point3 {
        let (x, z) = (self.nose_shift, self.nose_height);
        Point3::new(x, self.front_y(x, z) - 0.3 * self.nose_length, z)
    }

    pub fn mouth_center(&self) -> Point3 {
        let (x, z) = (self.mouth_shift, self.mouth_height);
        Point3::new(x, self.front_y(x, z) - 0.02, z)
    }

    fn primitives(&self) -> Vec<Primitive> {
        let [rx, ry, rz] = self.head_radii;
        let er = self.eye_radius;
        vec![
            Primitive { id: HEAD, center: Point3::ORIGIN, radii: [rx, ry, rz] },
            Primitive { id: HAIR, center: Point3::new(0.0, -0.03, 0.04), radii: [rx * 1.08, ry * 1.08, rz * 1.06] },
            Primitive { id: LEFT_EYE, center: self.eye_center(true), radii: [er, er, er] },
            Primitive { id: RIGHT_EYE, center: self.eye_center(false), radii: [er, er, er] },
            Primitive {
                id: NOSE,
                center: self.nose_center(),
                radii: [self.nose_width, self.nose_length, self.nose_width * 1.3],
            },
            Primitive {
                id: MOUTH,
                center: self.mouth_center(),
                radii: [self.mouth_width, 0.05, self.mouth_thickness],
            },
        ]
    }

    fn hair_covers(&self, p: &Point3) -> bool {
        let ry = self.head_radii[1];
        let s = ((p.y / ry + 1.0) * 0.5).clamp(0.0, 1.0);
        p.z > self.hair_back + (self.hair_front - self.hair_back) * s
    }

    fn albedo(&self, id: u8) -> [f64; 3] {
        match id {
            HEAD => self.skin,
            HAIR => self.hair,
            LEFT_EYE | RIGHT_EYE => [0.12, 0.1, 0.14],
            NOSE => [self.skin[0] * 0.93, self.skin[1] * 0.9, self.skin[2] * 0.9],
            MOUTH => [0.72, 0.26, 0.3],
            _ => BACKGROUND_COLOR,
        }
    }
}

pub const BACKGROUND: u8 = 0;
pub const HEAD: u8 = 1;
pub const HAIR: u8 = 2;
pub const LEFT_EYE: u8 = 3;
pub const RIGHT_EYE: u8 = 4;
pub const NOSE: u8 = 5;
pub const MOUTH: u8 = 6;

pub const BACKGROUND_COLOR: [f64; 3] = [1.0, 1.0, 1.0];

#[derive(Debug, Clone, Copy)]
struct Primitive {
    id: u8,
    center: Point3,
    radii: [f64; 3],
}

impl Primitive {
    /// Entry and exit distances of the ray through the ellipsoid.
    fn intersect(&self, ray: &Ray) -> Option<(f64, f64)> {
        let o = [
            (ray.origin.x - self.center.x) / self.radii[0],
            (ray.origin.y - self.center.y) / self.radii[1],
            (ray.origin.z - self.center.z) / self.radii[2],
        ];
        let d = [ray.dir[0] / self.radii[0], ray.dir[1] / self.radii[1], ray.dir[2] / self.radii[2]];
        let a = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        let b = 2.0 * (o[0] * d[0] + o[1] * d[1] + o[2] * d[2]);
        let c = o[0] * o[0] + o[1] * o[1] + o[2] * o[2] - 1.0;
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        Some(((-b - s) / (2.0 * a), (-b + s) / (2.0 * a)))
    }

    fn normal(&self, p: &Point3) -> [f64; 3] {
        let n = [
            (p.x - self.center.x) / (self.radii[0] * self.radii[0]),
            (p.y - self.center.y) / (self.radii[1] * self.radii[1]),
            (p.z - self.center.z) / (self.radii[2] * self.radii[2]),
        ];
        let l = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt().max(1e-12);
        [n[0] / l, n[1] / l, n[2] / l]
    }
}

/// Rendered color image and per-pixel object ids.
pub struct FaceRender {
    pub image: Image,
    pub ids: Vec<u8>,
}

/// Ray casts the head from `cam` at `size × size`. Shading is Lambertian
/// under a light at the eye, quantized to 8 bits.
pub fn render_face(params: &FaceParams, cam: &Camera, size: usize) -> FaceRender {
    let prims = params.primitives();
    let mut image = Image::new(3, size, size);
    let mut ids = vec![BACKGROUND; size * size];
    for (i, ray) in cam.generate_rays(size).iter().enumerate() {
        let mut best: Option<(f64, &Primitive)> = None;
        for prim in &prims {
            let Some((t0, t1)) = prim.intersect(ray) else { continue };
            for t in [t0, t1] {
                if t <= 0.0 {
                    continue;
                }
                if prim.id == HAIR && !params.hair_covers(&ray.at(t)) {
                    continue;
                }
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, prim));
                }
                break;
            }
        }
        let (color, id) = match best {
            None => (BACKGROUND_COLOR, BACKGROUND),
            Some((t, prim)) => {
                let p = ray.at(t);
                let n = prim.normal(&p);
                let lambert = -(n[0] * ray.dir[0] + n[1] * ray.dir[1] + n[2] * ray.dir[2]);
                let shade = 0.4 + 0.6 * lambert.abs();
                let a = params.albedo(prim.id);
                ([a[0] * shade, a[1] * shade, a[2] * shade], prim.id)
            }
        };
        ids[i] = id;
        let (y, x) = (i / size, i % size);
        for (c, v) in color.iter().enumerate() {
            image.set(c, y, x, (v.clamp(0.0, 1.0) * 255.0).round() as u8 as f32 / 255.0);
        }
    }
    FaceRender { image, ids }
}

/// Line drawing from object-id boundaries: a pixel is ink when its id
/// differs from its right or lower neighbor. Ink is 0, paper 1.
pub fn id_edges(ids: &[u8], size: usize) -> Image {
    let mut out = Image::filled(1, size, size, 1.0);
    for y in 0..size {
        for x in 0..size {
            let id = ids[y * size + x];
            let right = x + 1 < size && ids[y * size + x + 1] != id;
            let down = y + 1 < size && ids[(y + 1) * size + x] != id;
            if right || down {
                out.set(0, y, x, 0.0);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ellipsoid_hit_distance() {
        let p = Primitive { id: HEAD, center: Point3::ORIGIN, radii: [0.5, 0.5, 0.5] };
        let ray = Ray { origin: Point3::new(0.0, 2.0, 0.0), dir: [0.0, -1.0, 0.0] };
        let (t0, t1) = p.intersect(&ray).unwrap();
        assert!((t0 - 1.5).abs() < 1e-12 && (t1 - 2.5).abs() < 1e-12);
        let miss = Ray { origin: Point3::new(0.0, 2.0, 0.0), dir: [0.0, 0.0, 1.0] };
        assert!(p.intersect(&miss).is_none());
    }

    #[test]
    fn frontal_render_has_all_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = FaceParams::sample(&mut rng, true);
        let r = render_face(&params, &Camera::orbit(0.0, 0.0), 64);
        for id in [BACKGROUND, HEAD, HAIR, LEFT_EYE, RIGHT_EYE, NOSE, MOUTH] {
            assert!(r.ids.contains(&id), "missing id {id}");
        }
        // the left eye sits on the left half of a frontal image
        let u = Camera::orbit(0.0, 0.0).project(params.eye_center(true)).unwrap().0;
        assert!(u < 0.5);
    }

    #[test]
    fn mirrored_scene_is_flipped_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = FaceParams::sample(&mut rng, false);
        let cam = Camera::orbit(0.3, 0.1);
        let a = render_face(&params, &cam, 48);
        let b = render_face(&params.mirror(), &cam.mirror(), 48);
        let flipped = a.image.hflip();
        let differing = flipped.data.iter().zip(&b.image.data).filter(|(p, q)| (*p - *q).abs() > 1.5 / 255.0).count();
        assert!(differing <= 6, "{differing} differing values");
    }
}
