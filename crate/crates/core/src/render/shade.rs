//! Lambertian shading in linear space with gamma tonemapping.

use super::camera::Camera;
use super::vec3::{dot, normalize, sub};

/// `albedo * (ambient + (1 - ambient) * max(0, n . l))` per pixel, then
/// gamma-2.2 tonemap. Normals are camera-space (as produced by the
/// renderers); the light position is world-space. Pixels with zero normals
/// keep their albedo (background passes through untouched, tonemapped).
#[allow(clippy::too_many_arguments)]
pub fn lambertian_shade(
    albedo: &[f64],
    normal: &[f64],
    depth: &[f64],
    alpha: &[f64],
    light_pos: [f64; 3],
    cam: &Camera,
    ambient: f64,
    tonemap: bool,
) -> Vec<f64> {
    let hw = cam.width * cam.height;
    let mut out = albedo.to_vec();
    let light_cam = cam.to_camera(light_pos);
    for row in 0..cam.height {
        for col in 0..cam.width {
            let px = row * cam.width + col;
            let n = [normal[px], normal[hw + px], normal[2 * hw + px]];
            let defined = alpha[px] > 0.0 && (n[0] != 0.0 || n[1] != 0.0 || n[2] != 0.0);
            if defined {
                let p = cam.backproject_camera(row, col, depth[px]);
                let l = normalize(sub(light_cam, p));
                let lambert = dot(n, l).max(0.0);
                let k = ambient + (1.0 - ambient) * lambert;
                for ch in 0..3 {
                    out[ch * hw + px] = albedo[ch * hw + px] * k;
                }
            }
        }
    }
    if tonemap {
        for v in out.iter_mut() {
            *v = v.clamp(0.0, 1.0).powf(1.0 / 2.2);
        }
    }
    out
}
