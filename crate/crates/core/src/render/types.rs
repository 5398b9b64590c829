//! Scene and output containers for the CPU renderer.

use super::vec3::Vec3;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn unit() -> Self {
        Self {
            min: [-1.0; 3],
            max: [1.0; 3],
        }
    }

    pub fn extent(&self) -> Vec3 {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn diagonal(&self) -> f64 {
        let e = self.extent();
        (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
    }

    /// Slab intersection with a ray `o + t d`; returns the parameter range
    /// clipped to `t >= t_min`.
    pub fn clip_ray(&self, o: Vec3, d: Vec3, t_min: f64) -> Option<(f64, f64)> {
        let mut t0 = t_min;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if d[a].abs() < 1e-300 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (mut lo, mut hi) = ((self.min[a] - o[a]) * inv, (self.max[a] - o[a]) * inv);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// Dense density + color grid over an axis-aligned box. Values live on grid
/// nodes; `resolution` nodes per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGrid {
    pub resolution: usize,
    /// `resolution^3` non-negative densities, x-fastest layout.
    pub density: Vec<f64>,
    /// `3 * resolution^3` colors in [0,1]; channel-major.
    pub color: Vec<f64>,
    pub bounds: Aabb,
}

impl VolumeGrid {
    pub fn new(resolution: usize, bounds: Aabb) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::Domain("grid resolution must be >= 2".into()));
        }
        let n3 = resolution * resolution * resolution;
        Ok(Self {
            resolution,
            density: vec![0.0; n3],
            color: vec![0.0; 3 * n3],
            bounds,
        })
    }

    #[inline]
    pub fn node_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.resolution + iy) * self.resolution + ix
    }

    pub fn node_position(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        let n = (self.resolution - 1) as f64;
        let e = self.bounds.extent();
        [
            self.bounds.min[0] + e[0] * ix as f64 / n,
            self.bounds.min[1] + e[1] * iy as f64 / n,
            self.bounds.min[2] + e[2] * iz as f64 / n,
        ]
    }

    /// Fills density and color from closures over world position.
    pub fn fill(&mut self, f: impl Fn(Vec3) -> (f64, [f64; 3])) {
        let n = self.resolution;
        let n3 = n * n * n;
        for iz in 0..n {
            for iy in 0..n {
                for ix in 0..n {
                    let idx = self.node_index(ix, iy, iz);
                    let (d, c) = f(self.node_position(ix, iy, iz));
                    self.density[idx] = d;
                    for ch in 0..3 {
                        self.color[ch * n3 + idx] = c[ch];
                    }
                }
            }
        }
    }

    /// Trilinear interpolation weights for a world point: the 8 node indices
    /// and weights, or `None` outside the bounds.
    pub fn trilinear(&self, p: Vec3) -> Option<([usize; 8], [f64; 8])> {
        let n = self.resolution;
        let e = self.bounds.extent();
        let mut g = [0.0f64; 3];
        for a in 0..3 {
            if e[a] <= 0.0 {
                return None;
            }
            let f = (p[a] - self.bounds.min[a]) / e[a];
            if !(0.0..=1.0).contains(&f) {
                return None;
            }
            g[a] = f * (n - 1) as f64;
        }
        let i0 = [
            (g[0].floor() as usize).min(n - 2),
            (g[1].floor() as usize).min(n - 2),
            (g[2].floor() as usize).min(n - 2),
        ];
        let fr = [
            g[0] - i0[0] as f64,
            g[1] - i0[1] as f64,
            g[2] - i0[2] as f64,
        ];
        let mut idx = [0usize; 8];
        let mut w = [0.0f64; 8];
        for corner in 0..8 {
            let dx = corner & 1;
            let dy = (corner >> 1) & 1;
            let dz = (corner >> 2) & 1;
            idx[corner] = self.node_index(i0[0] + dx, i0[1] + dy, i0[2] + dz);
            let wx = if dx == 1 { fr[0] } else { 1.0 - fr[0] };
            let wy = if dy == 1 { fr[1] } else { 1.0 - fr[1] };
            let wz = if dz == 1 { fr[2] } else { 1.0 - fr[2] };
            w[corner] = wx * wy * wz;
        }
        Some((idx, w))
    }

    pub fn sample_density(&self, p: Vec3) -> f64 {
        match self.trilinear(p) {
            None => 0.0,
            Some((idx, w)) => idx
                .iter()
                .zip(&w)
                .map(|(&i, &wi)| wi * self.density[i])
                .sum(),
        }
    }

    pub fn sample_color(&self, p: Vec3) -> [f64; 3] {
        let n3 = self.density.len();
        match self.trilinear(p) {
            None => [0.0; 3],
            Some((idx, w)) => {
                let mut c = [0.0; 3];
                for (k, &i) in idx.iter().enumerate() {
                    for (ch, v) in c.iter_mut().enumerate() {
                        *v += w[k] * self.color[ch * n3 + i];
                    }
                }
                c
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n3 = self.resolution.pow(3);
        if self.density.len() != n3 || self.color.len() != 3 * n3 {
            return Err(Error::Structural("grid array sizes disagree".into()));
        }
        if self.density.iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
            return Err(Error::Domain("grid density must be finite and >= 0".into()));
        }
        if self.color.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(Error::Domain("grid colors must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// Isotropic Gaussian splats with depth-sorted compositing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplatSet {
    pub centers: Vec<Vec3>,
    /// Isotropic world-space standard deviations, > 0.
    pub scales: Vec<f64>,
    /// Peak opacities in (0, 1].
    pub opacities: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
}

impl SplatSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn push(&mut self, center: Vec3, scale: f64, opacity: f64, color: [f64; 3]) {
        self.centers.push(center);
        self.scales.push(scale);
        self.opacities.push(opacity);
        self.colors.push(color);
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.len() != self.len()
            || self.opacities.len() != self.len()
            || self.colors.len() != self.len()
        {
            return Err(Error::Structural("splat arrays disagree in length".into()));
        }
        if self.scales.iter().any(|&s| s <= 0.0) {
            return Err(Error::Domain("splat scales must be > 0".into()));
        }
        if self.opacities.iter().any(|&o| !(o > 0.0 && o <= 1.0)) {
            return Err(Error::Domain("splat opacities must be in (0,1]".into()));
        }
        Ok(())
    }
}

/// Triangle mesh with optional UVs and texture.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// Per-vertex UVs in [0,1]^2 when present.
    pub uv: Option<Vec<[f64; 2]>>,
    pub texture: Option<TextureImage>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        use super::vec3::{cross, normalize, sub};
        let [a, b, c] = self.faces[f];
        normalize(cross(
            sub(self.vertices[b], self.vertices[a]),
            sub(self.vertices[c], self.vertices[a]),
        ))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        use super::vec3::{cross, norm, sub};
        let [a, b, c] = self.faces[f];
        0.5 * norm(cross(
            sub(self.vertices[b], self.vertices[a]),
            sub(self.vertices[c], self.vertices[a]),
        ))
    }

    /// Drops zero-area faces (vertices kept).
    pub fn cleanup(&mut self) {
        let eps = 1e-14;
        self.faces.retain(|&[a, b, c]| {
            a != b && b != c && a != c && {
                use super::vec3::{cross, norm, sub};
                norm(cross(
                    sub(self.vertices[b], self.vertices[a]),
                    sub(self.vertices[c], self.vertices[a]),
                )) > eps
            }
        });
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.faces.iter().any(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::Structural("face index out of range".into()));
        }
        if let Some(uv) = &self.uv {
            if uv.len() != n {
                return Err(Error::Structural("uv count must match vertices".into()));
            }
        }
        Ok(())
    }

    pub fn bounds(&self) -> Aabb {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for a in 0..3 {
                min[a] = min[a].min(v[a]);
                max[a] = max[a].max(v[a]);
            }
        }
        Aabb { min, max }
    }
}

/// RGB float texture.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureImage {
    pub width: usize,
    pub height: usize,
    /// Channel-major `3 * H * W`.
    pub data: Vec<f64>,
}

impl TextureImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        let hw = self.width * self.height;
        let i = row * self.width + col;
        [self.data[i], self.data[hw + i], self.data[2 * hw + i]]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, c: [f64; 3]) {
        let hw = self.width * self.height;
        let i = row * self.width + col;
        self.data[i] = c[0];
        self.data[hw + i] = c[1];
        self.data[2 * hw + i] = c[2];
    }

    /// Nearest-texel sample at UV in [0,1]^2 (v up: row 0 is v = 1).
    pub fn sample_nearest(&self, u: f64, v: f64) -> [f64; 3] {
        let col = ((u * self.width as f64).floor() as i64).clamp(0, self.width as i64 - 1);
        let row = (((1.0 - v) * self.height as f64).floor() as i64).clamp(0, self.height as i64 - 1);
        self.get(row as usize, col as usize)
    }

    /// The texel that `sample_nearest` would read for a UV.
    pub fn texel_for_uv(&self, u: f64, v: f64) -> (usize, usize) {
        let col = ((u * self.width as f64).floor() as i64).clamp(0, self.width as i64 - 1);
        let row = (((1.0 - v) * self.height as f64).floor() as i64).clamp(0, self.height as i64 - 1);
        (row as usize, col as usize)
    }

    /// UV of a texel center.
    pub fn uv_for_texel(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5) / self.width as f64,
            1.0 - (row as f64 + 0.5) / self.height as f64,
        )
    }
}

/// Full per-view render result. Channel-major image layouts (`c * H * W`).
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f64>,
    pub alpha: Vec<f64>,
    pub depth: Vec<f64>,
    /// Camera-space unit normals where alpha passes threshold, zero elsewhere.
    pub normal: Vec<f64>,
    /// Per-pixel (weight, depth) contribution lists, row-major pixels.
    pub contribs: Option<Vec<Vec<(f64, f64)>>>,
}

impl RenderOutput {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            rgb: vec![0.0; 3 * width * height],
            alpha: vec![0.0; width * height],
            depth: vec![0.0; width * height],
            normal: vec![0.0; 3 * width * height],
            contribs: None,
        }
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn rgb_at(&self, row: usize, col: usize) -> [f64; 3] {
        let hw = self.width * self.height;
        let i = self.pixel(row, col);
        [self.rgb[i], self.rgb[hw + i], self.rgb[2 * hw + i]]
    }

    pub fn set_rgb(&mut self, row: usize, col: usize, c: [f64; 3]) {
        let hw = self.width * self.height;
        let i = self.pixel(row, col);
        self.rgb[i] = c[0];
        self.rgb[hw + i] = c[1];
        self.rgb[2 * hw + i] = c[2];
    }
}
