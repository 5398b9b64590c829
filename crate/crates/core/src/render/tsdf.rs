//! Truncated signed distance fusion of depth maps.
//!
//! Voxels accumulate `clamp((depth_at_projection - z) / trunc, -1, 1)` over
//! the views that observe them; the zero level set of the average is
//! extracted with marching cubes. Voxels observed by no view are masked out
//! so unobserved space produces no phantom surfaces.

use super::camera::Camera;
use super::mc::marching_cubes_field;
use super::types::{Aabb, TriMesh};
use crate::error::{Error, Result};

/// Fuses per-view z-depth maps (0 = no data) into a mesh.
pub fn tsdf_fuse(
    depths: &[Vec<f64>],
    cams: &[Camera],
    voxel: f64,
    trunc: f64,
) -> Result<TriMesh> {
    if depths.is_empty() || depths.len() != cams.len() {
        return Err(Error::Structural(
            "tsdf_fuse needs matching, non-empty depth/camera lists".into(),
        ));
    }
    if trunc < 2.0 * voxel {
        return Err(Error::Domain("trunc must be >= 2 * voxel".into()));
    }
    for (d, c) in depths.iter().zip(cams) {
        if d.len() != c.width * c.height {
            return Err(Error::ShapeMismatch("depth map size vs camera".into()));
        }
    }

    // Bounds: AABB of all backprojected surface points, padded by trunc.
    let mut bounds: Option<Aabb> = None;
    for (depth, cam) in depths.iter().zip(cams) {
        let r = &cam.rotation;
        let center = cam.center();
        for row in 0..cam.height {
            for col in 0..cam.width {
                let z = depth[row * cam.width + col];
                if z <= 0.0 {
                    continue;
                }
                let dc = cam.dir_camera(row, col);
                let p = [
                    center[0] + z * (r[0][0] * dc[0] + r[1][0] * dc[1] + r[2][0] * dc[2]),
                    center[1] + z * (r[0][1] * dc[0] + r[1][1] * dc[1] + r[2][1] * dc[2]),
                    center[2] + z * (r[0][2] * dc[0] + r[1][2] * dc[1] + r[2][2] * dc[2]),
                ];
                let b = bounds.get_or_insert(Aabb { min: p, max: p });
                for a in 0..3 {
                    b.min[a] = b.min[a].min(p[a]);
                    b.max[a] = b.max[a].max(p[a]);
                }
            }
        }
    }
    let Some(mut bounds) = bounds else {
        return Ok(TriMesh::default());
    };
    for a in 0..3 {
        bounds.min[a] -= trunc;
        bounds.max[a] += trunc;
    }

    let dims = [
        (((bounds.max[0] - bounds.min[0]) / voxel).ceil() as usize + 1).max(2),
        (((bounds.max[1] - bounds.min[1]) / voxel).ceil() as usize + 1).max(2),
        (((bounds.max[2] - bounds.min[2]) / voxel).ceil() as usize + 1).max(2),
    ];
    let node = |x: usize, y: usize, z: usize| -> [f64; 3] {
        [
            bounds.min[0] + voxel * x as f64,
            bounds.min[1] + voxel * y as f64,
            bounds.min[2] + voxel * z as f64,
        ]
    };

    let n = dims[0] * dims[1] * dims[2];
    let mut sdf_sum = vec![0.0f64; n];
    let mut weight = vec![0.0f64; n];
    for (depth, cam) in depths.iter().zip(cams) {
        for iz in 0..dims[2] {
            for iy in 0..dims[1] {
                for ix in 0..dims[0] {
                    let p = node(ix, iy, iz);
                    let (u, v, z) = cam.project(p);
                    if z <= 1e-9 {
                        continue;
                    }
                    let (col, row) = (u.floor() as i64, v.floor() as i64);
                    if col < 0 || row < 0 || col >= cam.width as i64 || row >= cam.height as i64 {
                        continue;
                    }
                    let d = depth[row as usize * cam.width + col as usize];
                    if d <= 0.0 {
                        continue;
                    }
                    let sdf = d - z;
                    if sdf < -trunc {
                        continue; // far behind the observed surface
                    }
                    let idx = (iz * dims[1] + iy) * dims[0] + ix;
                    sdf_sum[idx] += (sdf / trunc).clamp(-1.0, 1.0);
                    weight[idx] += 1.0;
                }
            }
        }
    }

    // Field = -tsdf (so "inside" means field > 0); unseen nodes are NaN and
    // marching cubes skips any cell touching them.
    let mesh = marching_cubes_field(
        dims,
        0.0,
        &|x, y, z| {
            let idx = (z * dims[1] + y) * dims[0] + x;
            if weight[idx] > 0.0 {
                -sdf_sum[idx] / weight[idx]
            } else {
                f64::NAN
            }
        },
        &|x, y, z| node(x, y, z),
    );
    Ok(mesh)
}
