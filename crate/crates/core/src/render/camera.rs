//! Pinhole camera.
//!
//! Convention: world-to-camera transform `q = R (p - eye)`; the camera looks
//! along +z in its own frame, x is image-right, y is image-down. Rays are
//! parameterized by camera-space z, so the marching parameter and all stored
//! depths are z-depths.

use super::vec3::{cross, normalize, scale, sub, Vec3};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    /// Translation so that `q = R p + t`; equals `-R * eye`.
    pub translation: Vec3,
    /// Focal length in pixels.
    pub focal: f64,
    /// Principal point `(cx, cy)` in pixels.
    pub principal: [f64; 2],
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera at `eye` looking at `target`; `up` is the world up direction
    /// (z-up worlds use `[0, 0, 1]`).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: usize, height: usize) -> Self {
        let fwd = normalize(sub(target, eye));
        let right = normalize(cross(fwd, up));
        let down = cross(fwd, right);
        let rotation = [right, down, fwd];
        let translation = [
            -(right[0] * eye[0] + right[1] * eye[1] + right[2] * eye[2]),
            -(down[0] * eye[0] + down[1] * eye[1] + down[2] * eye[2]),
            -(fwd[0] * eye[0] + fwd[1] * eye[1] + fwd[2] * eye[2]),
        ];
        Self {
            rotation,
            translation,
            focal,
            principal: [width as f64 / 2.0, height as f64 / 2.0],
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.focal <= 0.0 {
            return Err(Error::Domain("camera focal must be > 0".into()));
        }
        // Orthonormality within 1e-9.
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3)
                    .map(|k| self.rotation[i][k] * self.rotation[j][k])
                    .sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-9 {
                    return Err(Error::Domain("camera rotation not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        // eye = -R^T t
        let r = &self.rotation;
        let t = self.translation;
        [
            -(r[0][0] * t[0] + r[1][0] * t[1] + r[2][0] * t[2]),
            -(r[0][1] * t[0] + r[1][1] * t[1] + r[2][1] * t[2]),
            -(r[0][2] * t[0] + r[1][2] * t[1] + r[2][2] * t[2]),
        ]
    }

    /// World point to camera frame.
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + self.translation[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + self.translation[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + self.translation[2],
        ]
    }

    /// Projects a world point to `(u, v, z)`; z is the camera-space depth.
    pub fn project(&self, p: Vec3) -> (f64, f64, f64) {
        let q = self.to_camera(p);
        (
            self.focal * q[0] / q[2] + self.principal[0],
            self.focal * q[1] / q[2] + self.principal[1],
            q[2],
        )
    }

    /// Camera-space ray direction for a pixel, normalized to unit z.
    pub fn dir_camera(&self, row: usize, col: usize) -> Vec3 {
        [
            (col as f64 + 0.5 - self.principal[0]) / self.focal,
            (row as f64 + 0.5 - self.principal[1]) / self.focal,
            1.0,
        ]
    }

    /// World-space ray `(origin, direction)` for a pixel; the direction has
    /// unit camera-z so the ray parameter equals z-depth.
    pub fn ray(&self, row: usize, col: usize) -> (Vec3, Vec3) {
        let d = self.dir_camera(row, col);
        let r = &self.rotation;
        let dw = [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ];
        (self.center(), dw)
    }

    /// Backprojects a pixel at z-depth `z` to camera space.
    pub fn backproject_camera(&self, row: usize, col: usize, z: f64) -> Vec3 {
        scale(self.dir_camera(row, col), z)
    }
}

/// Ring of `n` cameras around the z axis at radius `r`, height `h`, looking
/// at the origin.
pub fn camera_ring(n: usize, radius: f64, height: f64, focal: f64, res: usize) -> Vec<Camera> {
    (0..n)
        .map(|i| {
            let theta = std::f64::consts::TAU * i as f64 / n as f64;
            Camera::look_at(
                [radius * theta.cos(), radius * theta.sin(), height],
                [0.0, 0.0, 0.0],
                [0.0, 0.0, 1.0],
                focal,
                res,
                res,
            )
        })
        .collect()
}
