//! Reconstruction state and the incremental fitting loop.

use super::fit::{backward_view, eval_view, FitRenderOptions, LossReport};
use super::grid::{sigmoid, AdamState, GridParams};
use crate::error::{Error, Result};
use crate::losses::{laplacian_smoothing, normal_consistency, LossWeights};
use crate::render::camera::Camera;
use crate::render::mc::marching_cubes;
use crate::render::mesh::{MeshHit, MeshRaycaster};
use crate::render::types::{RenderOutput, TextureImage, TriMesh};
use crate::render::volume::{raymarch_volume, RaymarchOptions};
use crate::stack::{StackShape, ViewStack};
use crate::world::{FeedbackPacket, FeedbackSource, TexturedQuad};
use serde::{Deserialize, Serialize};

/// Fitting configuration (per denoising step).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub steps_per_denoise: usize,
    pub weights: LossWeights,
    pub lr_density: f64,
    pub lr_color: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub grid_res: usize,
    /// Samples across the bounds diagonal (marching step = diag / this).
    pub march_steps: usize,
    pub mesh_iso: f64,
    /// Feedback likelihood temperature (consumed by the pipelines).
    pub rho: f64,
    /// Background shell thickness d of the ray entropy loss.
    pub entropy_background: f64,
    pub alpha_blur_sigma: f64,
    pub mask_erosion_iters: usize,
    /// Render resolution used for fitting; 0 means the target resolution.
    pub fit_resolution: usize,
    /// Texture resolution for quad-world closed-form fits.
    pub texture_size: usize,
    /// Cosine falloff power for quad texture weights.
    pub cosine_power: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps_per_denoise: 96,
            weights: LossWeights::default(),
            lr_density: 0.05,
            lr_color: 0.02,
            beta1: 0.9,
            beta2: 0.99,
            grid_res: 16,
            march_steps: 64,
            mesh_iso: 1.0,
            rho: 0.1,
            entropy_background: 1.0,
            alpha_blur_sigma: 2.0,
            mask_erosion_iters: 2,
            fit_resolution: 0,
            texture_size: 64,
            cosine_power: 1.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_res < 2 {
            return Err(Error::Domain("grid_res must be >= 2".into()));
        }
        if self.march_steps == 0 {
            return Err(Error::Domain("march_steps must be > 0".into()));
        }
        if self.rho <= 0.0 {
            return Err(Error::Domain("rho must be > 0".into()));
        }
        if self.entropy_background <= 0.0 {
            return Err(Error::Domain("entropy_background must be > 0".into()));
        }
        self.weights.validate()
    }

    pub fn render_options(&self, bounds_diag: f64) -> FitRenderOptions {
        FitRenderOptions {
            step: bounds_diag / self.march_steps as f64,
            normal_threshold: 0.5,
            entropy_background: self.entropy_background,
            mask_erosion_iters: self.mask_erosion_iters,
        }
    }
}

/// RGB targets plus alpha silhouettes for fitting, at matching resolution.
#[derive(Debug, Clone)]
pub struct FitTargets {
    /// RGB stack (3 channels).
    pub rgb: ViewStack,
    /// Alpha stack (1 channel).
    pub alpha: ViewStack,
}

impl FitTargets {
    pub fn validate(&self) -> Result<()> {
        let (r, a) = (self.rgb.shape(), self.alpha.shape());
        if r.channels != 3 || a.channels != 1 {
            return Err(Error::Structural("fit targets need RGB + alpha".into()));
        }
        if r.views != a.views || r.height != a.height || r.width != a.width {
            return Err(Error::ShapeMismatch("fit target stacks".into()));
        }
        Ok(())
    }

    /// 2x box-downsampled targets.
    pub fn downsample(&self) -> FitTargets {
        FitTargets {
            rgb: downsample_stack(&self.rgb),
            alpha: downsample_stack(&self.alpha),
        }
    }

    /// Downsample until the width matches `res` (must divide evenly).
    pub fn at_resolution(&self, res: usize) -> FitTargets {
        let mut cur = self.clone();
        while cur.rgb.shape().width > res && cur.rgb.shape().width % 2 == 0 {
            cur = cur.downsample();
        }
        cur
    }
}

pub fn downsample_stack(stack: &ViewStack) -> ViewStack {
    let sh = stack.shape();
    let out_shape = StackShape {
        height: sh.height / 2,
        width: sh.width / 2,
        ..sh
    };
    let mut out = ViewStack::zeros(out_shape);
    for v in 0..sh.views {
        for c in 0..sh.channels {
            for r in 0..out_shape.height {
                for w in 0..out_shape.width {
                    let s = 0.25
                        * (stack.get(v, c, 2 * r, 2 * w)
                            + stack.get(v, c, 2 * r, 2 * w + 1)
                            + stack.get(v, c, 2 * r + 1, 2 * w)
                            + stack.get(v, c, 2 * r + 1, 2 * w + 1));
                    out.set(v, c, r, w, s);
                }
            }
        }
    }
    out
}

/// Scale a camera's intrinsics to a new square resolution.
pub fn camera_at_resolution(cam: &Camera, res: usize) -> Camera {
    let scale = res as f64 / cam.width as f64;
    Camera {
        focal: cam.focal * scale,
        principal: [cam.principal[0] * scale, cam.principal[1] * scale],
        width: res,
        height: (cam.height as f64 * scale) as usize,
        ..cam.clone()
    }
}

/// Reconstruction phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Volume-grid optimization.
    Nerf,
    /// Fixed extracted mesh; the color field keeps optimizing.
    Mesh,
    /// Closed-form texture solve on known quad geometry.
    Texture,
}

/// Cached raycast for one (camera slot, resolution) pair in the mesh phase.
#[derive(Debug, Clone)]
pub struct HitCache {
    pub hits: Vec<Option<MeshHit>>,
    pub points: Vec<[f64; 3]>,
    pub render: RenderOutput,
}

/// The carried 3D state of the adapter.
#[derive(Debug, Clone)]
pub struct ReconState {
    pub phase: Phase,
    pub step_count: u64,
    pub params: GridParams,
    pub adam: AdamState,
    pub mesh: Option<TriMesh>,
    /// Quad-phase solved texture.
    pub quad_texture: Option<TextureImage>,
    pub warnings: Vec<String>,
    /// Per-(slot, resolution) raycast caches for the mesh phase.
    hit_caches: std::collections::HashMap<(usize, usize), HitCache>,
    /// Constant mesh regularizer values computed at extraction.
    pub mesh_laplacian: f64,
    pub mesh_normal_consistency: f64,
}

impl ReconState {
    pub fn new(cfg: &FitConfig, bounds: crate::render::types::Aabb) -> Self {
        let params = GridParams::new(cfg.grid_res, bounds);
        let adam = AdamState::for_params(&params);
        Self {
            phase: Phase::Nerf,
            step_count: 0,
            params,
            adam,
            mesh: None,
            quad_texture: None,
            warnings: Vec::new(),
            hit_caches: std::collections::HashMap::new(),
            mesh_laplacian: 0.0,
            mesh_normal_consistency: 0.0,
        }
    }

    pub fn new_texture_phase(cfg: &FitConfig, bounds: crate::render::types::Aabb) -> Self {
        let mut s = Self::new(cfg, bounds);
        s.phase = Phase::Texture;
        s.quad_texture = Some(TextureImage {
            width: cfg.texture_size,
            height: cfg.texture_size,
            data: vec![0.5; 3 * cfg.texture_size * cfg.texture_size],
        });
        s
    }

    fn mesh_hits(&mut self, slot: usize, cam: &Camera) -> Result<&HitCache> {
        let key = (slot, cam.width);
        if !self.hit_caches.contains_key(&key) {
            let mesh = self
                .mesh
                .as_ref()
                .ok_or_else(|| Error::Structural("mesh phase without mesh".into()))?;
            let caster = MeshRaycaster::new(mesh);
            let mut hits = Vec::with_capacity(cam.width * cam.height);
            let mut points = Vec::with_capacity(cam.width * cam.height);
            let mut render = RenderOutput::new(cam.width, cam.height);
            let hw = cam.width * cam.height;
            let mut contribs = vec![Vec::new(); hw];
            for row in 0..cam.height {
                for col in 0..cam.width {
                    let (o, d) = cam.ray(row, col);
                    let hit = caster.cast(o, d, 1e-9);
                    let px = row * cam.width + col;
                    match hit {
                        Some(h) => {
                            let p = caster.hit_point(&h);
                            points.push(p);
                            render.alpha[px] = 1.0;
                            render.depth[px] = h.t;
                            contribs[px].push((1.0, h.t));
                        }
                        None => points.push([0.0; 3]),
                    }
                    hits.push(hit);
                }
            }
            render.normal = crate::render::normals::normals_from_depth(
                &render.depth,
                &render.alpha,
                cam,
                0.5,
            );
            render.contribs = Some(contribs);
            self.hit_caches.insert(key, HitCache {
                hits,
                points,
                render,
            });
        }
        Ok(&self.hit_caches[&key])
    }

    /// Renders the current representation from a camera. Contribution lists
    /// are recorded when `contribs` is set (volume and mesh paths both).
    pub fn render(&mut self, slot: usize, cam: &Camera, march_step: f64, contribs: bool) -> Result<RenderOutput> {
        match self.phase {
            Phase::Nerf => {
                let grid = self.params.to_grid();
                let opts = RaymarchOptions {
                    step: march_step,
                    contribs,
                    ..Default::default()
                };
                raymarch_volume(&grid, cam, &opts)
            }
            Phase::Mesh => {
                let grid = self.params.to_grid();
                let cache = self.mesh_hits(slot, cam)?;
                let mut out = cache.render.clone();
                if !contribs {
                    out.contribs = None;
                }
                let hw = cam.width * cam.height;
                for px in 0..hw {
                    if cache.hits[px].is_some() {
                        let c = grid.sample_color(cache.points[px]);
                        out.rgb[px] = c[0];
                        out.rgb[hw + px] = c[1];
                        out.rgb[2 * hw + px] = c[2];
                    }
                }
                Ok(out)
            }
            Phase::Texture => Err(Error::Structural(
                "texture phase renders via quad geometry".into(),
            )),
        }
    }
}

/// Runs `cfg.steps_per_denoise` moment-based gradient steps on the volume
/// (or color field in the mesh phase); returns the final loss report.
pub fn fit_incremental(
    state: &mut ReconState,
    targets: &FitTargets,
    cams: &[Camera],
    cfg: &FitConfig,
) -> Result<LossReport> {
    targets.validate()?;
    cfg.validate()?;
    let sh = targets.rgb.shape();
    if sh.views != cams.len() {
        return Err(Error::ShapeMismatch("targets vs cameras".into()));
    }
    let res = if cfg.fit_resolution == 0 {
        sh.width
    } else {
        cfg.fit_resolution.min(sh.width)
    };
    let t = targets.at_resolution(res);
    let fit_cams: Vec<Camera> = cams.iter().map(|c| camera_at_resolution(c, res)).collect();
    let opts = cfg.render_options(state.params.bounds.diagonal());
    let hw = res * res;

    let mut report = LossReport::default();
    for _ in 0..cfg.steps_per_denoise {
        match state.phase {
            Phase::Nerf => {
                let grid = state.params.to_grid();
                let mut gd = vec![0.0; state.params.theta_density.len()];
                let mut gc = vec![0.0; state.params.theta_color.len()];
                report = LossReport::default();
                for (vi, cam) in fit_cams.iter().enumerate() {
                    let t_rgb = &t.rgb.view(vi)[..3 * hw];
                    let t_alpha = &t.alpha.view(vi)[..hw];
                    let ev = eval_view(&grid, cam, t_rgb, t_alpha, &opts)?;
                    report.accumulate(&ev.report);
                    backward_view(
                        &state.params,
                        &grid,
                        cam,
                        &ev,
                        t_rgb,
                        t_alpha,
                        &cfg.weights,
                        &opts,
                        &mut gd,
                        &mut gc,
                    )?;
                }
                if gd.iter().chain(gc.iter()).any(|g| !g.is_finite()) {
                    return Err(Error::FitAborted("non-finite gradient".into()));
                }
                state.adam.t += 1;
                AdamState::step_block(
                    &mut state.adam.density,
                    &mut state.params.theta_density,
                    &gd,
                    cfg.lr_density,
                    cfg.beta1,
                    cfg.beta2,
                    state.adam.t,
                );
                AdamState::step_block(
                    &mut state.adam.color,
                    &mut state.params.theta_color,
                    &gc,
                    cfg.lr_color,
                    cfg.beta1,
                    cfg.beta2,
                    state.adam.t,
                );
            }
            Phase::Mesh => {
                report = fit_mesh_color_step(state, &t, &fit_cams, cfg)?;
            }
            Phase::Texture => {
                return Err(Error::Structural(
                    "texture phase fits via fit_feedforward_quads".into(),
                ));
            }
        }
        state.step_count += 1;
    }
    report.laplacian = state.mesh_laplacian;
    report.normal_consistency = state.mesh_normal_consistency;
    Ok(report)
}

/// One gradient step on the color field against fixed mesh geometry.
fn fit_mesh_color_step(
    state: &mut ReconState,
    targets: &FitTargets,
    cams: &[Camera],
    cfg: &FitConfig,
) -> Result<LossReport> {
    let res = cams[0].width;
    let hw = res * res;
    let n3 = state.params.theta_density.len();
    let grid = state.params.to_grid();
    let mut gc = vec![0.0; state.params.theta_color.len()];
    let mut report = LossReport::default();
    for vi in 0..cams.len() {
        let cam = cams[vi].clone();
        let cache = state.mesh_hits(vi, &cam)?.clone();
        let t_rgb = &targets.rgb.view(vi)[..3 * hw];
        let t_alpha = &targets.alpha.view(vi)[..hw];
        // Forward: color the cached geometry.
        let mut rgb = vec![0.0; 3 * hw];
        for px in 0..hw {
            if cache.hits[px].is_some() {
                let c = grid.sample_color(cache.points[px]);
                rgb[px] = c[0];
                rgb[hw + px] = c[1];
                rgb[2 * hw + px] = c[2];
            }
        }
        let mean_abs = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
        };
        report.rgb += mean_abs(&rgb, t_rgb);
        report.alpha += mean_abs(&cache.render.alpha, t_alpha);
        report.perceptual += crate::losses::patch_perceptual(&rgb, t_rgb, res, res)?;
        // Backward: L1 + perceptual into the color logits.
        let mut d_rgb: Vec<f64> = rgb
            .iter()
            .zip(t_rgb)
            .map(|(a, b)| cfg.weights.rgb * (a - b).signum() * ((a - b) != 0.0) as i32 as f64 / rgb.len() as f64)
            .collect();
        if cfg.weights.perceptual > 0.0 {
            let g = crate::losses::patch_perceptual_bwd(&rgb, t_rgb, res, res);
            for (a, b) in d_rgb.iter_mut().zip(&g) {
                *a += cfg.weights.perceptual * b;
            }
        }
        for px in 0..hw {
            if cache.hits[px].is_none() {
                continue;
            }
            if let Some((idx, wtri)) = grid.trilinear(cache.points[px]) {
                for ch in 0..3 {
                    let d = d_rgb[ch * hw + px];
                    if d == 0.0 {
                        continue;
                    }
                    for (k, &j) in idx.iter().enumerate() {
                        let s = sigmoid(state.params.theta_color[ch * n3 + j]);
                        gc[ch * n3 + j] += d * wtri[k] * s * (1.0 - s);
                    }
                }
            }
        }
    }
    if gc.iter().any(|g| !g.is_finite()) {
        return Err(Error::FitAborted("non-finite mesh color gradient".into()));
    }
    state.adam.t += 1;
    AdamState::step_block(
        &mut state.adam.color,
        &mut state.params.theta_color,
        &gc,
        cfg.lr_color,
        cfg.beta1,
        cfg.beta2,
        state.adam.t,
    );
    report.laplacian = state.mesh_laplacian;
    report.normal_consistency = state.mesh_normal_consistency;
    Ok(report)
}

/// Extracts the density iso-surface and switches to the mesh phase; the
/// color field is retained as the texture field. An empty surface keeps the
/// nerf phase and records a warning.
pub fn switch_to_mesh(state: &mut ReconState, iso: f64) -> Result<()> {
    if state.phase != Phase::Nerf {
        return Err(Error::Structural("switch_to_mesh needs nerf phase".into()));
    }
    let grid = state.params.to_grid();
    let mesh = marching_cubes(&grid, iso);
    if mesh.is_empty() {
        state
            .warnings
            .push(format!("marching cubes at iso {iso} found no surface; staying in nerf phase"));
        return Ok(());
    }
    state.mesh_laplacian = laplacian_smoothing(&mesh).unwrap_or(0.0);
    state.mesh_normal_consistency = normal_consistency(&mesh).unwrap_or(0.0);
    state.mesh = Some(mesh);
    state.hit_caches.clear();
    state.phase = Phase::Mesh;
    Ok(())
}

/// Closed-form per-texel weighted least squares for known quad geometry.
///
/// Each view pixel's ray hits at most one texel (nearest sampling), so the
/// normal equations are diagonal: `texel = sum(w c) / sum(w)`.
pub fn fit_feedforward_quads(
    targets: &FitTargets,
    cams: &[Camera],
    quad: &TexturedQuad,
    texture_size: usize,
    cosine_power: f64,
) -> Result<(TextureImage, Vec<bool>)> {
    targets.validate()?;
    let sh = targets.rgb.shape();
    if sh.views != cams.len() {
        return Err(Error::ShapeMismatch("targets vs cameras".into()));
    }
    let mesh = quad.mesh();
    let caster = MeshRaycaster::new(&mesh);
    let probe = TextureImage::new(texture_size, texture_size);
    let normal = mesh.face_normal(0);
    let mut acc = vec![[0.0f64; 3]; texture_size * texture_size];
    let mut wsum = vec![0.0f64; texture_size * texture_size];
    for (vi, cam) in cams.iter().enumerate() {
        for row in 0..sh.height {
            for col in 0..sh.width {
                let (o, d) = cam.ray(row, col);
                let Some(hit) = caster.cast(o, d, 1e-9) else {
                    continue;
                };
                let Some(uv) = caster.hit_uv(&hit) else {
                    continue;
                };
                let (trow, tcol) = probe.texel_for_uv(uv[0], uv[1]);
                let dn = crate::render::vec3::normalize(d);
                let cos = crate::render::vec3::dot(normal, dn).abs();
                let a = targets.alpha.get(vi, 0, row, col);
                let w = a * cos.powf(cosine_power);
                if w <= 0.0 {
                    continue;
                }
                let idx = trow * texture_size + tcol;
                for ch in 0..3 {
                    acc[idx][ch] += w * targets.rgb.get(vi, ch, row, col);
                }
                wsum[idx] += w;
            }
        }
    }
    let mut tex = TextureImage::new(texture_size, texture_size);
    let mut filled = vec![false; texture_size * texture_size];
    for row in 0..texture_size {
        for col in 0..texture_size {
            let idx = row * texture_size + col;
            if wsum[idx] > 0.0 {
                tex.set(
                    row,
                    col,
                    [
                        acc[idx][0] / wsum[idx],
                        acc[idx][1] / wsum[idx],
                        acc[idx][2] / wsum[idx],
                    ],
                );
                filled[idx] = true;
            }
        }
    }
    Ok((tex, filled))
}

/// Fits per the current phase, then renders an RGBD feedback packet from
/// the requested cameras. Zero-budget configs render the prior state.
pub fn reconstruct_and_render(
    state: &mut ReconState,
    targets: &FitTargets,
    cams: &[Camera],
    cfg: &FitConfig,
    render_cams: &[Camera],
    quad_geometry: Option<&TexturedQuad>,
) -> Result<(LossReport, FeedbackPacket)> {
    let report = match state.phase {
        Phase::Texture => {
            let quad = quad_geometry
                .ok_or_else(|| Error::Structural("texture phase needs quad geometry".into()))?;
            if cfg.steps_per_denoise > 0 {
                let (tex, _) = fit_feedforward_quads(
                    targets,
                    cams,
                    quad,
                    cfg.texture_size,
                    cfg.cosine_power,
                )?;
                state.quad_texture = Some(tex);
                state.step_count += 1;
            }
            LossReport::default()
        }
        _ => {
            if cfg.steps_per_denoise > 0 {
                fit_incremental(state, targets, cams, cfg)?
            } else {
                LossReport::default()
            }
        }
    };

    // Render the feedback packet.
    let sh = StackShape {
        views: render_cams.len(),
        channels: 4,
        height: render_cams[0].height,
        width: render_cams[0].width,
    };
    let mut views = ViewStack::zeros(sh);
    let march = state.params.bounds.diagonal() / cfg.march_steps as f64;
    for (vi, cam) in render_cams.iter().enumerate() {
        let out = match state.phase {
            Phase::Texture => {
                let quad = quad_geometry.unwrap();
                let mut m = quad.mesh();
                m.texture = state.quad_texture.clone();
                crate::render::mesh::render_mesh_textured(&m, cam, [0.0; 3])?
            }
            _ => state.render(1000 + vi, cam, march, false)?,
        };
        let hw = sh.height * sh.width;
        let dst = views.view_mut(vi);
        dst[..3 * hw].copy_from_slice(&out.rgb);
        dst[3 * hw..4 * hw].copy_from_slice(&out.depth);
    }
    Ok((
        report,
        FeedbackPacket {
            views,
            source: FeedbackSource::Reconstruction,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::types::Aabb;

    fn ring(n: usize, res: usize) -> Vec<Camera> {
        crate::render::camera::camera_ring(n, 3.2, 0.7, res as f64 * 1.1, res)
    }

    fn targets_from_grid(params: &GridParams, cams: &[Camera], cfg: &FitConfig) -> FitTargets {
        let grid = params.to_grid();
        let res = cams[0].width;
        let sh = StackShape {
            views: cams.len(),
            channels: 3,
            height: res,
            width: res,
        };
        let sh_a = StackShape { channels: 1, ..sh };
        let mut rgb = ViewStack::zeros(sh);
        let mut alpha = ViewStack::zeros(sh_a);
        let opts = RaymarchOptions {
            step: params.bounds.diagonal() / cfg.march_steps as f64,
            ..Default::default()
        };
        for (vi, cam) in cams.iter().enumerate() {
            let out = raymarch_volume(&grid, cam, &opts).unwrap();
            let hw = res * res;
            rgb.view_mut(vi).copy_from_slice(&out.rgb);
            alpha.view_mut(vi)[..hw].copy_from_slice(&out.alpha);
        }
        FitTargets { rgb, alpha }
    }

    fn blob_params(res: usize) -> GridParams {
        let mut p = GridParams::new(res, Aabb::unit());
        let n = res;
        for iz in 0..n {
            for iy in 0..n {
                for ix in 0..n {
                    let idx = (iz * n + iy) * n + ix;
                    let pos = [
                        -1.0 + 2.0 * ix as f64 / (n - 1) as f64,
                        -1.0 + 2.0 * iy as f64 / (n - 1) as f64,
                        -1.0 + 2.0 * iz as f64 / (n - 1) as f64,
                    ];
                    let r = (pos[0] * pos[0] + pos[1] * pos[1] + pos[2] * pos[2]).sqrt();
                    p.theta_density[idx] = if r < 0.55 { 3.0 } else { -4.0 };
                    p.theta_color[idx] = 1.2; // warm-ish
                    p.theta_color[n * n * n + idx] = -0.5;
                    p.theta_color[2 * n * n * n + idx] = 0.3;
                }
            }
        }
        p
    }

    #[test]
    fn fit_fixed_point_when_targets_match_state() {
        // Regularizer-free config: data terms vanish on the state's own
        // render, so parameters must not move.
        let cfg = FitConfig {
            steps_per_denoise: 8,
            weights: LossWeights {
                rgb: 1.0,
                alpha: 1.0,
                depth: 0.0,
                perceptual: 1.0,
                normal_tv: 0.0,
                entropy: 0.0,
                laplacian: 0.0,
                normal_consistency: 0.0,
            },
            grid_res: 8,
            march_steps: 32,
            ..Default::default()
        };
        let cams = ring(2, 16);
        let mut state = ReconState::new(&cfg, Aabb::unit());
        state.params = blob_params(8);
        state.adam = AdamState::for_params(&state.params);
        let targets = targets_from_grid(&state.params, &cams, &cfg);
        let before = state.params.clone();
        fit_incremental(&mut state, &targets, &cams, &cfg).unwrap();
        let delta: f64 = before
            .theta_density
            .iter()
            .zip(&state.params.theta_density)
            .chain(before.theta_color.iter().zip(&state.params.theta_color))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(delta < 1e-6, "parameter change {delta}");
    }

    #[test]
    fn fit_converges_to_single_prototype_targets() {
        let cfg = FitConfig {
            steps_per_denoise: 60,
            grid_res: 10,
            march_steps: 48,
            lr_density: 0.12,
            lr_color: 0.08,
            ..Default::default()
        };
        let cams = ring(3, 24);
        let truth = blob_params(10);
        let targets = targets_from_grid(&truth, &cams, &cfg);
        let mut state = ReconState::new(&cfg, Aabb::unit());
        let mut last = LossReport::default();
        for _ in 0..10 {
            last = fit_incremental(&mut state, &targets, &cams, &cfg).unwrap();
        }
        let l1 = last.rgb + last.alpha;
        assert!(l1 / cams.len() as f64 / 2.0 < 0.03, "final data loss {l1}");
    }

    #[test]
    fn incrementality_split_budget_equals_single_budget() {
        let cfg_a = FitConfig {
            steps_per_denoise: 6,
            grid_res: 6,
            march_steps: 24,
            ..Default::default()
        };
        let cfg_b = FitConfig {
            steps_per_denoise: 10,
            ..cfg_a.clone()
        };
        let cfg_ab = FitConfig {
            steps_per_denoise: 16,
            ..cfg_a.clone()
        };
        let cams = ring(2, 16);
        let truth = blob_params(6);
        let targets = targets_from_grid(&truth, &cams, &cfg_a);
        let mut split = ReconState::new(&cfg_a, Aabb::unit());
        fit_incremental(&mut split, &targets, &cams, &cfg_a).unwrap();
        fit_incremental(&mut split, &targets, &cams, &cfg_b).unwrap();
        let mut joint = ReconState::new(&cfg_ab, Aabb::unit());
        fit_incremental(&mut joint, &targets, &cams, &cfg_ab).unwrap();
        for (a, b) in split
            .params
            .theta_density
            .iter()
            .zip(&joint.params.theta_density)
        {
            assert_eq!(a, b);
        }
        assert_eq!(split.step_count, joint.step_count);
    }

    #[test]
    fn density_stays_nonnegative_through_updates() {
        let cfg = FitConfig {
            steps_per_denoise: 20,
            grid_res: 6,
            march_steps: 24,
            lr_density: 0.5,
            ..Default::default()
        };
        let cams = ring(2, 16);
        let truth = blob_params(6);
        let targets = targets_from_grid(&truth, &cams, &cfg);
        let mut state = ReconState::new(&cfg, Aabb::unit());
        fit_incremental(&mut state, &targets, &cams, &cfg).unwrap();
        let grid = state.params.to_grid();
        assert!(grid.density.iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn switch_to_mesh_extracts_sphere_and_changes_phase() {
        let cfg = FitConfig {
            grid_res: 12,
            ..Default::default()
        };
        let mut state = ReconState::new(&cfg, Aabb::unit());
        state.params = blob_params(12);
        state.adam = AdamState::for_params(&state.params);
        switch_to_mesh(&mut state, 1.0).unwrap();
        assert_eq!(state.phase, Phase::Mesh);
        let mesh = state.mesh.as_ref().unwrap();
        assert!(!mesh.is_empty());
        // Iso(1.0) of softplus-space density: the blob has theta 3.0
        // (density ~3.05) inside radius 0.55 and ~0.018 outside; the
        // surface sits within one cell of r = 0.55.
        let cell = 2.0 / 11.0;
        for v in &mesh.vertices {
            let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            assert!((r - 0.55).abs() < cell * 1.8, "vertex radius {r}");
        }
        // Conversion fidelity: re-render of the mesh state vs the nerf
        // render stays close in RGB.
        let cams = ring(2, 24);
        let mut nerf_state = ReconState::new(&cfg, Aabb::unit());
        nerf_state.params = blob_params(12);
        nerf_state.adam = AdamState::for_params(&nerf_state.params);
        let march = 2.0 * 3.0f64.sqrt() / 64.0;
        for (vi, cam) in cams.iter().enumerate() {
            let a = nerf_state.render(vi, cam, march, false).unwrap();
            let b = state.render(vi, cam, march, false).unwrap();
            let diff: f64 = a
                .rgb
                .iter()
                .zip(&b.rgb)
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                / a.rgb.len() as f64;
            assert!(diff < 0.05, "view {vi}: mean abs rgb diff {diff}");
        }
    }

    #[test]
    fn switch_to_mesh_empty_surface_keeps_nerf() {
        let cfg = FitConfig {
            grid_res: 6,
            ..Default::default()
        };
        let mut state = ReconState::new(&cfg, Aabb::unit());
        switch_to_mesh(&mut state, 100.0).unwrap();
        assert_eq!(state.phase, Phase::Nerf);
        assert!(!state.warnings.is_empty());
    }

    #[test]
    fn quad_texture_solve_matches_least_squares_oracle() {
        use crate::rng::{normal, rng_for};
        let quad = TexturedQuad {
            center: [0.0, 0.0, 0.0],
            u_axis: [0.9, 0.0, 0.0],
            v_axis: [0.0, 0.0, 0.9],
            texture: TextureImage::new(8, 8),
        };
        let res = 24;
        let cams: Vec<Camera> = [-130.0f64, -105.0, -75.0, -50.0]
            .iter()
            .map(|a| {
                let th = a.to_radians();
                Camera::look_at(
                    [4.0 * th.cos(), 4.0 * th.sin(), 0.2],
                    [0.0; 3],
                    [0.0, 0.0, 1.0],
                    res as f64,
                    res,
                    res,
                )
            })
            .collect();
        let mut rng = rng_for(51, 0);
        let sh = StackShape {
            views: 4,
            channels: 3,
            height: res,
            width: res,
        };
        let rgb = {
            let mut s = ViewStack::zeros(sh);
            for v in s.data_mut() {
                *v = 0.5 + 0.2 * normal(&mut rng);
            }
            s
        };
        let alpha = ViewStack::constant(
            StackShape {
                channels: 1,
                ..sh
            },
            1.0,
        );
        let targets = FitTargets { rgb: rgb.clone(), alpha };
        let tex_size = 8;
        let (tex, filled) =
            fit_feedforward_quads(&targets, &cams, &quad, tex_size, 1.0).unwrap();

        // Oracle: independently gather (texel, weight, color) triples per
        // pixel and solve each texel's scalar least squares directly.
        let mesh = quad.mesh();
        let caster = MeshRaycaster::new(&mesh);
        let probe = TextureImage::new(tex_size, tex_size);
        let n = mesh.face_normal(0);
        let mut num = vec![[0.0f64; 3]; tex_size * tex_size];
        let mut den = vec![0.0f64; tex_size * tex_size];
        for (vi, cam) in cams.iter().enumerate() {
            for row in 0..res {
                for col in 0..res {
                    let (o, d) = cam.ray(row, col);
                    if let Some(hit) = caster.cast(o, d, 1e-9) {
                        let uv = caster.hit_uv(&hit).unwrap();
                        let (tr, tc) = probe.texel_for_uv(uv[0], uv[1]);
                        let dn = crate::render::vec3::normalize(d);
                        let w = crate::render::vec3::dot(n, dn).abs();
                        let idx = tr * tex_size + tc;
                        for ch in 0..3 {
                            num[idx][ch] += w * rgb.get(vi, ch, row, col);
                        }
                        den[idx] += w;
                    }
                }
            }
        }
        let mut any = false;
        for row in 0..tex_size {
            for col in 0..tex_size {
                let idx = row * tex_size + col;
                if den[idx] > 0.0 {
                    assert!(filled[idx]);
                    let got = tex.get(row, col);
                    for ch in 0..3 {
                        let want = num[idx][ch] / den[idx];
                        assert!(
                            (got[ch] - want).abs() < 1e-10,
                            "texel ({row},{col}) ch {ch}: {} vs {want}",
                            got[ch]
                        );
                    }
                    any = true;
                }
            }
        }
        assert!(any);
    }

    #[test]
    fn quad_solve_is_idempotent_on_its_own_rerender() {
        let quad = TexturedQuad {
            center: [0.0, 0.0, 0.0],
            u_axis: [0.9, 0.0, 0.0],
            v_axis: [0.0, 0.0, 0.9],
            texture: TextureImage::new(8, 8),
        };
        let res = 32;
        let cams: Vec<Camera> = [-120.0f64, -60.0]
            .iter()
            .map(|a| {
                let th = a.to_radians();
                Camera::look_at(
                    [3.5 * th.cos(), 3.5 * th.sin(), 0.1],
                    [0.0; 3],
                    [0.0, 0.0, 1.0],
                    res as f64,
                    res,
                    res,
                )
            })
            .collect();
        // First solve from arbitrary structured views.
        let sh = StackShape {
            views: 2,
            channels: 3,
            height: res,
            width: res,
        };
        let mut rgb = ViewStack::zeros(sh);
        for v in 0..2 {
            for r in 0..res {
                for c in 0..res {
                    rgb.set(v, 0, r, c, r as f64 / res as f64);
                    rgb.set(v, 1, r, c, c as f64 / res as f64);
                    rgb.set(v, 2, r, c, 0.5);
                }
            }
        }
        let alpha = ViewStack::constant(StackShape { channels: 1, ..sh }, 1.0);
        let targets = FitTargets { rgb, alpha: alpha.clone() };
        let tex_size = 16;
        let (tex1, _) = fit_feedforward_quads(&targets, &cams, &quad, tex_size, 1.0).unwrap();

        // Re-render the solved texture and refit.
        let mut textured = quad.clone();
        textured.texture = tex1.clone();
        let mesh = textured.mesh();
        let mut rgb2 = ViewStack::zeros(sh);
        for (vi, cam) in cams.iter().enumerate() {
            let out = crate::render::mesh::render_mesh_textured(&mesh, cam, [0.0; 3]).unwrap();
            rgb2.view_mut(vi).copy_from_slice(&out.rgb);
        }
        let targets2 = FitTargets { rgb: rgb2, alpha };
        let (tex2, filled2) =
            fit_feedforward_quads(&targets2, &cams, &quad, tex_size, 1.0).unwrap();
        for idx in 0..tex_size * tex_size {
            if filled2[idx] {
                let (r, c) = (idx / tex_size, idx % tex_size);
                let (a, b) = (tex1.get(r, c), tex2.get(r, c));
                for ch in 0..3 {
                    assert!(
                        (a[ch] - b[ch]).abs() < 1e-12,
                        "texel {idx} ch {ch}: {} vs {}",
                        a[ch],
                        b[ch]
                    );
                }
            }
        }
    }

    #[test]
    fn reconstruct_and_render_zero_budget_and_depth_nonnegative() {
        let cfg0 = FitConfig {
            steps_per_denoise: 0,
            grid_res: 6,
            march_steps: 24,
            ..Default::default()
        };
        let cams = ring(2, 16);
        let truth = blob_params(6);
        let targets = targets_from_grid(&truth, &cams, &cfg0);
        let mut state = ReconState::new(&cfg0, Aabb::unit());
        let before = state.params.clone();
        let (_, packet) =
            reconstruct_and_render(&mut state, &targets, &cams, &cfg0, &cams, None).unwrap();
        assert_eq!(before, state.params);
        packet.validate().unwrap();
        // Depth channel non-negative.
        let sh = packet.views.shape();
        for v in 0..sh.views {
            for r in 0..sh.height {
                for c in 0..sh.width {
                    assert!(packet.views.get(v, 3, r, c) >= 0.0);
                }
            }
        }
    }

    #[test]
    fn reconstruct_consistent_targets_rerenders_close() {
        let cfg = FitConfig {
            steps_per_denoise: 40,
            grid_res: 10,
            march_steps: 48,
            lr_density: 0.12,
            lr_color: 0.08,
            ..Default::default()
        };
        let cams = ring(3, 24);
        let truth = blob_params(10);
        let targets = targets_from_grid(&truth, &cams, &cfg);
        let mut state = ReconState::new(&cfg, Aabb::unit());
        let mut packet = None;
        for _ in 0..8 {
            let (_, p) =
                reconstruct_and_render(&mut state, &targets, &cams, &cfg, &cams, None).unwrap();
            packet = Some(p);
        }
        let packet = packet.unwrap();
        let rgb_fb = packet.views.select_channels(&[0, 1, 2]);
        let diff = rgb_fb.mean_abs_diff(&targets.rgb).unwrap();
        assert!(diff < 1e-2 * 3.0, "feedback residual {diff}");
    }
}
