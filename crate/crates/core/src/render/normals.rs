//! Normal maps from rendered depth.
//!
//! Depth pixels backproject to camera-space points (z-depth convention);
//! normals are normalized cross products of central-difference tangents,
//! oriented toward the camera. Pixels whose alpha (or any 4-neighbor's
//! alpha) falls below the threshold get a zero normal.

use super::camera::Camera;
use super::vec3::{cross, dot, norm, scale, sub, Vec3};

fn defined(alpha: &[f64], w: usize, h: usize, row: usize, col: usize, thr: f64) -> bool {
    row >= 1
        && col >= 1
        && row + 1 < h
        && col + 1 < w
        && alpha[row * w + col] >= thr
        && alpha[row * w + col - 1] >= thr
        && alpha[row * w + col + 1] >= thr
        && alpha[(row - 1) * w + col] >= thr
        && alpha[(row + 1) * w + col] >= thr
}

#[inline]
fn point(cam: &Camera, depth: &[f64], row: usize, col: usize) -> Vec3 {
    cam.backproject_camera(row, col, depth[row * cam.width + col])
}

/// Camera-space normal map (`3 * H * W`, channel-major).
pub fn normals_from_depth(depth: &[f64], alpha: &[f64], cam: &Camera, threshold: f64) -> Vec<f64> {
    let (w, h) = (cam.width, cam.height);
    let hw = w * h;
    let mut out = vec![0.0; 3 * hw];
    for row in 0..h {
        for col in 0..w {
            if !defined(alpha, w, h, row, col, threshold) {
                continue;
            }
            let tu = scale(
                sub(point(cam, depth, row, col + 1), point(cam, depth, row, col - 1)),
                0.5,
            );
            let tv = scale(
                sub(point(cam, depth, row + 1, col), point(cam, depth, row - 1, col)),
                0.5,
            );
            let raw = cross(tu, tv);
            let len = norm(raw);
            if len < 1e-300 {
                continue;
            }
            let mut n = scale(raw, 1.0 / len);
            // Orient toward the camera (negative z hemisphere in cam space).
            if dot(n, cam.dir_camera(row, col)) > 0.0 {
                n = scale(n, -1.0);
            }
            let px = row * w + col;
            out[px] = n[0];
            out[hw + px] = n[1];
            out[2 * hw + px] = n[2];
        }
    }
    out
}

/// Backward pass of [`normals_from_depth`]: accumulates `dL/ddepth` from
/// `dL/dnormal`, replaying the forward decisions (defined mask, orientation
/// sign) exactly.
pub fn normals_from_depth_bwd(
    depth: &[f64],
    alpha: &[f64],
    cam: &Camera,
    threshold: f64,
    d_normal: &[f64],
) -> Vec<f64> {
    let (w, h) = (cam.width, cam.height);
    let hw = w * h;
    let mut d_depth = vec![0.0; hw];
    for row in 0..h {
        for col in 0..w {
            if !defined(alpha, w, h, row, col, threshold) {
                continue;
            }
            let px = row * w + col;
            let g = [d_normal[px], d_normal[hw + px], d_normal[2 * hw + px]];
            if g == [0.0; 3] {
                continue;
            }
            let tu = scale(
                sub(point(cam, depth, row, col + 1), point(cam, depth, row, col - 1)),
                0.5,
            );
            let tv = scale(
                sub(point(cam, depth, row + 1, col), point(cam, depth, row - 1, col)),
                0.5,
            );
            let raw = cross(tu, tv);
            let len = norm(raw);
            if len < 1e-300 {
                continue;
            }
            let mut n = scale(raw, 1.0 / len);
            let mut sign = 1.0;
            if dot(n, cam.dir_camera(row, col)) > 0.0 {
                n = scale(n, -1.0);
                sign = -1.0;
            }
            // d n / d raw = sign * (I - n_unsigned n_unsigned^T) / len, with
            // n_unsigned = sign * n.
            let nu = scale(n, sign);
            let gn = dot(g, nu);
            let d_raw = scale(sub(g, scale(nu, gn)), sign / len);
            // raw = tu x tv: d_tu = tv x d_raw, d_tv = d_raw x tu.
            let d_tu = cross(tv, d_raw);
            let d_tv = cross(d_raw, tu);
            // tangents are 0.5 * (P_plus - P_minus); P = depth * dir.
            let mut scatter = |r: usize, c: usize, dp: Vec3| {
                d_depth[r * w + c] += dot(dp, cam.dir_camera(r, c));
            };
            scatter(row, col + 1, scale(d_tu, 0.5));
            scatter(row, col - 1, scale(d_tu, -0.5));
            scatter(row + 1, col, scale(d_tv, 0.5));
            scatter(row - 1, col, scale(d_tv, -0.5));
        }
    }
    d_depth
}
