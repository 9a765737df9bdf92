use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::triplane::Point3;

/// Normalized sub-window of the image plane a camera's pixel grid covers.
/// `(0, 0, 1)` is the whole frame; region cameras use smaller windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub u0: f64,
    pub v0: f64,
    pub span: f64,
}

impl Default for Window {
    fn default() -> Self {
        Self { u0: 0.0, v0: 0.0, span: 1.0 }
    }
}

/// Orbit camera looking at the origin with +z up. `yaw = 0` sits on the +y
/// axis, positive pitch raises the camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub yaw: f64,
    pub pitch: f64,
    pub radius: f64,
    pub fov_y: f64,
    #[serde(default)]
    pub window: Window,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3,
    pub dir: [f64; 3],
}

impl Ray {
    pub fn at(&self, t: f64) -> Point3 {
        Point3::new(
            self.origin.x + t * self.dir[0],
            self.origin.y + t * self.dir[1],
            self.origin.z + t * self.dir[2],
        )
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

impl Camera {
    pub const DEFAULT_RADIUS: f64 = 2.7;
    pub const DEFAULT_FOV_Y: f64 = 0.6;

    pub fn new(yaw: f64, pitch: f64, radius: f64, fov_y: f64) -> Result<Self> {
        let cam = Self { yaw, pitch, radius, fov_y, window: Window::default() };
        cam.validate()?;
        Ok(cam)
    }

    pub fn orbit(yaw: f64, pitch: f64) -> Self {
        Self {
            yaw,
            pitch,
            radius: Self::DEFAULT_RADIUS,
            fov_y: Self::DEFAULT_FOV_Y,
            window: Window::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.yaw, self.pitch, self.radius, self.fov_y].iter().all(|v| v.is_finite());
        if !finite
            || self.radius <= 0.0
            || self.pitch.abs() >= std::f64::consts::FRAC_PI_2
            || self.fov_y <= 0.0
            || self.fov_y >= std::f64::consts::PI
            || self.window.span <= 0.0
        {
            return Err(Error::InvalidInput(format!("invalid camera {self:?}")));
        }
        Ok(())
    }

    pub fn position(&self) -> Point3 {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        Point3::new(self.radius * cp * sy, self.radius * cp * cy, self.radius * sp)
    }

    /// Camera frame `(forward, right, up)`.
    pub fn basis(&self) -> ([f64; 3], [f64; 3], [f64; 3]) {
        let p = self.position();
        let forward = normalize([-p.x, -p.y, -p.z]);
        let right = normalize(cross(forward, [0.0, 0.0, 1.0]));
        let up = cross(right, forward);
        (forward, right, up)
    }

    /// 3×4 camera-to-world matrix, columns `[right, up, -forward, position]`.
    pub fn pose(&self) -> [[f64; 4]; 3] {
        let (f, r, u) = self.basis();
        let p = self.position();
        let pos = [p.x, p.y, p.z];
        let mut m = [[0.0; 4]; 3];
        for i in 0..3 {
            m[i] = [r[i], u[i], -f[i], pos[i]];
        }
        m
    }

    /// Pinhole intrinsics `(focal, cx, cy)` in pixels for an `h × h` grid,
    /// accounting for the window.
    pub fn intrinsics(&self, h: usize) -> (f64, f64, f64) {
        let h = h as f64;
        let focal = h / (2.0 * (self.fov_y * 0.5).tan() * self.window.span);
        let cx = (0.5 - self.window.u0) / self.window.span * h;
        let cy = (0.5 - self.window.v0) / self.window.span * h;
        (focal, cx, cy)
    }

    /// Reflection of the camera about the yz-plane.
    pub fn mirror(&self) -> Camera {
        Camera {
            yaw: -self.yaw,
            window: Window {
                u0: 1.0 - self.window.u0 - self.window.span,
                ..self.window
            },
            ..*self
        }
    }

    /// `h × h` rays in row-major order, one per pixel center.
    pub fn generate_rays(&self, h: usize) -> Vec<Ray> {
        let (f, r, u) = self.basis();
        let t = (self.fov_y * 0.5).tan();
        let origin = self.position();
        let w = self.window;
        let mut rays = Vec::with_capacity(h * h);
        for i in 0..h {
            let v = w.v0 + w.span * (i as f64 + 0.5) / h as f64;
            let ndc_y = (1.0 - 2.0 * v) * t;
            for j in 0..h {
                let uu = w.u0 + w.span * (j as f64 + 0.5) / h as f64;
                let ndc_x = (2.0 * uu - 1.0) * t;
                let d = [
                    f[0] + ndc_x * r[0] + ndc_y * u[0],
                    f[1] + ndc_x * r[1] + ndc_y * u[1],
                    f[2] + ndc_x * r[2] + ndc_y * u[2],
                ];
                rays.push(Ray { origin, dir: normalize(d) });
            }
        }
        rays
    }

    /// Near/far bounds enclosing the cube `[-e, e]^3` from this camera.
    pub fn bounds(&self, extent: f64) -> (f64, f64) {
        let half_diag = 3f64.sqrt() * extent;
        let near = (self.radius - half_diag).max(1e-3);
        (near, self.radius + half_diag)
    }

    /// Projects a world point to normalized image coordinates `(u, v)` of the
    /// full frame (ignores the window). `None` behind the camera.
    pub fn project(&self, p: Point3) -> Option<(f64, f64)> {
        let (f, r, u) = self.basis();
        let o = self.position();
        let d = [p.x - o.x, p.y - o.y, p.z - o.z];
        let z = d[0] * f[0] + d[1] * f[1] + d[2] * f[2];
        if z <= 0.0 {
            return None;
        }
        let t = (self.fov_y * 0.5).tan();
        let x = (d[0] * r[0] + d[1] * r[1] + d[2] * r[2]) / (z * t);
        let y = (d[0] * u[0] + d[1] * u[1] + d[2] * u[2]) / (z * t);
        Some(((x + 1.0) * 0.5, (1.0 - y) * 0.5))
    }
}

pub fn mirror_camera(cam: &Camera) -> Camera {
    cam.mirror()
}

pub fn generate_rays(cam: &Camera, h: usize) -> Vec<Ray> {
    cam.generate_rays(h)
}
