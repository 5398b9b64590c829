//! Emission-absorption ray marching over dense grids.
//!
//! Per ray: `a_i = 1 - exp(-sigma_i dt)`, `w_i = T_i a_i`,
//! `T_{i+1} = T_i (1 - a_i)`. Alpha accumulates as the telescoping sum of
//! weights, so `sum(w) = alpha` holds exactly.

use super::camera::Camera;
use super::normals::normals_from_depth;
use super::types::{RenderOutput, VolumeGrid};
use super::vec3::{add, scale, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct RaymarchOptions {
    /// Marching step in z-depth units; 0 selects bounds diagonal / 256.
    pub step: f64,
    pub background: [f64; 3],
    /// Record per-pixel (weight, depth) contribution lists.
    pub contribs: bool,
    /// Contributions below this weight are not recorded.
    pub weight_floor: f64,
    /// Alpha threshold for defining normals.
    pub normal_threshold: f64,
}

impl Default for RaymarchOptions {
    fn default() -> Self {
        Self {
            step: 0.0,
            background: [0.0; 3],
            contribs: false,
            weight_floor: 1e-12,
            normal_threshold: 0.5,
        }
    }
}

impl RaymarchOptions {
    pub fn resolve_step(&self, grid: &VolumeGrid) -> f64 {
        if self.step > 0.0 {
            self.step
        } else {
            grid.bounds.diagonal() / 256.0
        }
    }
}

/// The sample ladder a ray takes through the grid: entry/exit parameters and
/// uniform sub-steps. Shared between the forward pass and gradient code so
/// both walk identical sample positions.
pub struct RaySamples {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t0: f64,
    pub dt: f64,
    pub count: usize,
}

impl RaySamples {
    #[inline]
    pub fn position(&self, i: usize) -> Vec3 {
        add(self.origin, scale(self.dir, self.tau(i)))
    }

    #[inline]
    pub fn tau(&self, i: usize) -> f64 {
        self.t0 + (i as f64 + 0.5) * self.dt
    }
}

/// Computes the sample ladder for one pixel, or None when the ray misses the
/// grid bounds.
pub fn ray_samples(grid: &VolumeGrid, cam: &Camera, row: usize, col: usize, step: f64) -> Option<RaySamples> {
    let (origin, dir) = cam.ray(row, col);
    let (t0, t1) = grid.bounds.clip_ray(origin, dir, 1e-9)?;
    if t1 <= t0 {
        return None;
    }
    let count = ((t1 - t0) / step).ceil().max(1.0) as usize;
    let dt = (t1 - t0) / count as f64;
    Some(RaySamples {
        origin,
        dir,
        t0,
        dt,
        count,
    })
}

/// Renders a volume grid from a camera.
pub fn raymarch_volume(grid: &VolumeGrid, cam: &Camera, opts: &RaymarchOptions) -> Result<RenderOutput> {
    cam.validate()?;
    if !cam.center().iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("camera outside numeric range".into()));
    }
    let step = opts.resolve_step(grid);
    if step <= 0.0 {
        return Err(Error::Domain("raymarch step must be > 0".into()));
    }
    let (w, h) = (cam.width, cam.height);
    let hw = w * h;
    let mut out = RenderOutput::new(w, h);
    let mut contribs: Option<Vec<Vec<(f64, f64)>>> = opts.contribs.then(|| vec![Vec::new(); hw]);

    for row in 0..h {
        for col in 0..w {
            let px = row * w + col;
            let mut rgb = [0.0f64; 3];
            let mut alpha = 0.0;
            let mut depth_num = 0.0;
            let mut transmittance = 1.0;
            if let Some(samples) = ray_samples(grid, cam, row, col, step) {
                for i in 0..samples.count {
                    let p = samples.position(i);
                    let sigma = grid.sample_density(p);
                    if sigma <= 0.0 {
                        continue;
                    }
                    let a = 1.0 - (-sigma * samples.dt).exp();
                    let weight = transmittance * a;
                    if weight > 0.0 {
                        let c = grid.sample_color(p);
                        let tau = samples.tau(i);
                        for ch in 0..3 {
                            rgb[ch] += weight * c[ch];
                        }
                        alpha += weight;
                        depth_num += weight * tau;
                        if let Some(lists) = contribs.as_mut() {
                            if weight > opts.weight_floor {
                                lists[px].push((weight, tau));
                            }
                        }
                    }
                    transmittance *= 1.0 - a;
                    if transmittance < 1e-12 {
                        break;
                    }
                }
            }
            for ch in 0..3 {
                out.rgb[ch * hw + px] = rgb[ch] + (1.0 - alpha) * opts.background[ch];
            }
            out.alpha[px] = alpha;
            out.depth[px] = if alpha > 0.0 {
                depth_num / alpha.max(1e-6)
            } else {
                0.0
            };
        }
    }
    out.normal = normals_from_depth(&out.depth, &out.alpha, cam, opts.normal_threshold);
    out.contribs = contribs;
    Ok(out)
}
