//! Texture backprojection: weighted blending of view colors into UV space.

use super::camera::Camera;
use super::mesh::{cast_camera, MeshRaycaster};
use super::types::{TextureImage, TriMesh};
use super::vec3::{dot, normalize, sub, Vec3};
use crate::error::{Error, Result};
use crate::stack::ViewStack;

#[derive(Debug, Clone, Copy)]
pub struct BackprojectOptions {
    pub texture_size: usize,
    /// Cosine falloff power k in `max(0, cos theta)^k`.
    pub cosine_power: f64,
    /// Depth-test bias as a fraction of the scene scale.
    pub visibility_bias: f64,
}

impl Default for BackprojectOptions {
    fn default() -> Self {
        Self {
            texture_size: 64,
            cosine_power: 1.0,
            visibility_bias: 1e-3,
        }
    }
}

/// Result of backprojection: the blended texture and the per-texel fill
/// mask (texels seen by no view stay unfilled).
pub struct BackprojectResult {
    pub texture: TextureImage,
    pub filled: Vec<bool>,
}

/// A surface sample attached to a texel.
struct TexelPoint {
    row: usize,
    col: usize,
    point: Vec3,
    normal: Vec3,
}

/// Rasterizes mesh faces in UV space: one surface sample per covered texel.
fn texel_points(mesh: &TriMesh, size: usize) -> Result<Vec<TexelPoint>> {
    let uv = mesh
        .uv
        .as_ref()
        .ok_or_else(|| Error::Structural("backprojection requires mesh UVs".into()))?;
    let probe = TextureImage::new(size, size);
    let mut out = Vec::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        let (a, b, c) = (uv[f[0]], uv[f[1]], uv[f[2]]);
        let (pa, pb, pc) = (
            mesh.vertices[f[0]],
            mesh.vertices[f[1]],
            mesh.vertices[f[2]],
        );
        let n = mesh.face_normal(fi);
        // Texel bounding box of the uv triangle.
        let (umin, umax) = (
            a[0].min(b[0]).min(c[0]),
            a[0].max(b[0]).max(c[0]),
        );
        let (vmin, vmax) = (
            a[1].min(b[1]).min(c[1]),
            a[1].max(b[1]).max(c[1]),
        );
        let (r0, c0) = probe.texel_for_uv(umin, vmax);
        let (r1, c1) = probe.texel_for_uv(umax, vmin);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        if det.abs() < 1e-14 {
            continue;
        }
        for row in r0..=r1.min(size - 1) {
            for col in c0..=c1.min(size - 1) {
                let (u, v) = probe.uv_for_texel(row, col);
                let w1 = ((u - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (v - a[1])) / det;
                let w2 = ((b[0] - a[0]) * (v - a[1]) - (u - a[0]) * (b[1] - a[1])) / det;
                let w0 = 1.0 - w1 - w2;
                let eps = -1e-9;
                if w0 < eps || w1 < eps || w2 < eps {
                    continue;
                }
                out.push(TexelPoint {
                    row,
                    col,
                    point: [
                        w0 * pa[0] + w1 * pb[0] + w2 * pc[0],
                        w0 * pa[1] + w1 * pb[1] + w2 * pc[1],
                        w0 * pa[2] + w1 * pb[2] + w2 * pc[2],
                    ],
                    normal: n,
                })
            }
        }
    }
    Ok(out)
}

fn bilinear_sample(view: &[f64], hw: usize, w: usize, h: usize, u: f64, v: f64, ch: usize) -> f64 {
    let x = (u - 0.5).clamp(0.0, w as f64 - 1.0);
    let y = (v - 0.5).clamp(0.0, h as f64 - 1.0);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |r: usize, c: usize| view[ch * hw + r * w + c];
    at(y0, x0) * (1.0 - fx) * (1.0 - fy)
        + at(y0, x1) * fx * (1.0 - fy)
        + at(y1, x0) * (1.0 - fx) * fy
        + at(y1, x1) * fx * fy
}

/// Blends per-view colors into the mesh's UV texture.
///
/// `views` must carry at least 4 channels (RGB + alpha). Per texel and view,
/// the weight is `visibility * alpha * max(0, cos theta)^k`; visibility is a
/// depth test against a per-view depth buffer raycast from the mesh.
pub fn backproject_texture(
    views: &ViewStack,
    cams: &[Camera],
    mesh: &TriMesh,
    opts: &BackprojectOptions,
) -> Result<BackprojectResult> {
    let shape = views.shape();
    if shape.views != cams.len() {
        return Err(Error::ShapeMismatch("views vs cameras".into()));
    }
    if shape.channels < 4 {
        return Err(Error::Structural(
            "backprojection views need RGB + alpha channels".into(),
        ));
    }
    mesh.validate()?;
    let size = opts.texture_size;
    let points = texel_points(mesh, size)?;
    let _caster = MeshRaycaster::new(mesh);
    let scene_scale = mesh.bounds().diagonal().max(1e-9);
    let bias = opts.visibility_bias * scene_scale;

    // Per-view depth buffers from the mesh itself.
    let depth_bufs: Vec<Vec<f64>> = cams
        .iter()
        .map(|cam| {
            cast_camera(mesh, cam)
                .into_iter()
                .map(|h| h.map_or(0.0, |hit| hit.t))
                .collect()
        })
        .collect();

    let mut texture = TextureImage::new(size, size);
    let mut weight_sum = vec![0.0f64; size * size];
    let hw = shape.height * shape.width;
    for tp in &points {
        let mut acc = [0.0f64; 3];
        let mut wsum = 0.0;
        for (vi, cam) in cams.iter().enumerate() {
            let (u, v, z) = cam.project(tp.point);
            if z <= 1e-9
                || u < 0.0
                || v < 0.0
                || u >= shape.width as f64
                || v >= shape.height as f64
            {
                continue;
            }
            // Visibility: the point must be the nearest surface on its ray.
            let db = depth_bufs[vi][(v as usize) * cam.width + u as usize];
            if db <= 0.0 || z > db + bias {
                continue;
            }
            let view_dir = normalize(sub(tp.point, cam.center()));
            let cos = (-dot(tp.normal, view_dir)).max(0.0);
            if cos <= 0.0 {
                continue;
            }
            let view = views.view(vi);
            let a = bilinear_sample(view, hw, shape.width, shape.height, u, v, 3);
            let w = a * cos.powf(opts.cosine_power);
            if w <= 0.0 {
                continue;
            }
            for ch in 0..3 {
                acc[ch] += w * bilinear_sample(view, hw, shape.width, shape.height, u, v, ch);
            }
            wsum += w;
        }
        if wsum > 0.0 {
            let idx = tp.row * size + tp.col;
            // Texels touched by multiple faces accumulate across them.
            let prev = texture.get(tp.row, tp.col);
            let total = weight_sum[idx] + wsum;
            texture.set(
                tp.row,
                tp.col,
                [
                    (prev[0] * weight_sum[idx] + acc[0]) / total,
                    (prev[1] * weight_sum[idx] + acc[1]) / total,
                    (prev[2] * weight_sum[idx] + acc[2]) / total,
                ],
            );
            weight_sum[idx] = total;
        }
    }
    Ok(BackprojectResult {
        texture,
        filled: weight_sum.iter().map(|&w| w > 0.0).collect(),
    })
}
