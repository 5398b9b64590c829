//! Shipped world presets.
//!
//! - `bimodal-texture`: one quad geometry, two mirrored textures. The
//!   smallest world that exhibits the consistency / mode-collapse trade-off
//!   for texture-style generation.
//! - `tetra-4`: four colored blobs at tetrahedron vertices.
//! - `bimodal-splat`: two mirrored blob clusters rendered volumetrically;
//!   per-ray contribution lists make it the MDD testbed.

use crate::error::{Error, Result};
use crate::render::camera::Camera;
use crate::render::types::{Aabb, TextureImage, VolumeGrid};
use crate::render::vec3::Vec3;
use crate::world::{ProtoObject, Prototype, TexturedQuad, WorldModel};

pub const WORLD_PRESETS: [&str; 3] = ["bimodal-texture", "tetra-4", "bimodal-splat"];

/// Builds a named world preset at the given view resolution.
pub fn world_preset(name: &str, view_res: usize) -> Result<WorldModel> {
    match name {
        "bimodal-texture" => bimodal_texture(view_res),
        "tetra-4" => tetra4(view_res),
        "bimodal-splat" => bimodal_splat(view_res),
        other => Err(Error::Lookup(format!("unknown world preset {other:?}"))),
    }
}

fn arc_cameras(azimuths_deg: &[f64], radius: f64, height: f64, view_res: usize) -> Vec<Camera> {
    azimuths_deg
        .iter()
        .map(|a| {
            let th = a.to_radians();
            Camera::look_at(
                [radius * th.cos(), radius * th.sin(), height],
                [0.0, 0.0, 0.0],
                [0.0, 0.0, 1.0],
                view_res as f64 * 1.1,
                view_res,
                view_res,
            )
        })
        .collect()
}

fn texture_pattern(res: usize, mirrored: bool) -> TextureImage {
    let mut tex = TextureImage::new(res, res);
    for row in 0..res {
        for col in 0..res {
            let mut u = (col as f64 + 0.5) / res as f64;
            let v = (row as f64 + 0.5) / res as f64;
            if mirrored {
                u = 1.0 - u;
            }
            // Horizontally asymmetric pattern: gradient plus a dark stripe
            // on the left and a bright block upper-right.
            let mut c = [0.15 + 0.7 * u, 0.2 + 0.6 * v, 0.85 - 0.7 * u];
            if u < 0.2 {
                c = [0.05, 0.05, 0.1];
            }
            if u > 0.65 && v < 0.35 {
                c = [0.95, 0.9, 0.2];
            }
            tex.set(row, col, c);
        }
    }
    tex
}

fn bimodal_texture(view_res: usize) -> Result<WorldModel> {
    let quad = |mirrored: bool| TexturedQuad {
        center: [0.0, 0.0, 0.0],
        u_axis: [0.9, 0.0, 0.0],
        v_axis: [0.0, 0.0, 0.9],
        texture: texture_pattern(32, mirrored),
    };
    let prototypes = vec![
        Prototype {
            id: 0,
            object: ProtoObject::Quad(quad(false)),
            prior: 0.5,
            label: Some("left".into()),
        },
        Prototype {
            id: 1,
            object: ProtoObject::Quad(quad(true)),
            prior: 0.5,
            label: Some("right".into()),
        },
    ];
    // Cameras on the -y side (the quad normal faces -y), mirror-paired
    // about the -y axis.
    let cams = arc_cameras(&[-140.0, -110.0, -70.0, -40.0], 4.0, 0.3, view_res);
    WorldModel::new(prototypes, cams, 0.0)
}

fn blob_grid(res: usize, blobs: &[(Vec3, f64, [f64; 3])], peak: f64) -> VolumeGrid {
    let mut g = VolumeGrid::new(res, Aabb::unit()).unwrap();
    g.fill(|p| {
        let mut density = 0.0;
        let mut color = [0.0; 3];
        let mut wsum = 0.0;
        for (center, radius, c) in blobs {
            let d2 = (p[0] - center[0]).powi(2)
                + (p[1] - center[1]).powi(2)
                + (p[2] - center[2]).powi(2);
            let w = (-0.5 * d2 / (radius * radius * 0.25)).exp();
            density += peak * w;
            for (cc, &ch) in color.iter_mut().zip(c) {
                *cc += w * ch;
            }
            wsum += w;
        }
        if wsum > 1e-12 {
            for cc in color.iter_mut() {
                *cc = (*cc / wsum).clamp(0.0, 1.0);
            }
        }
        (density.min(3.0 * peak), color)
    });
    g
}

fn tetra4(view_res: usize) -> Result<WorldModel> {
    let s = 0.45;
    let verts: [Vec3; 4] = [
        [s, s, s],
        [s, -s, -s],
        [-s, s, -s],
        [-s, -s, s],
    ];
    let colors: [[f64; 3]; 4] = [
        [0.9, 0.15, 0.1],
        [0.1, 0.8, 0.2],
        [0.15, 0.25, 0.9],
        [0.9, 0.85, 0.15],
    ];
    let labels = ["warm", "cool", "cool", "warm"];
    let prototypes = (0..4)
        .map(|k| Prototype {
            id: k,
            object: ProtoObject::Grid(blob_grid(20, &[(verts[k], 0.5, colors[k])], 14.0)),
            prior: 0.25,
            label: Some(labels[k].into()),
        })
        .collect();
    let cams = arc_cameras(&[0.0, 90.0, 180.0, 270.0], 3.5, 1.0, view_res);
    WorldModel::new(prototypes, cams, 0.0)
}

fn bimodal_splat(view_res: usize) -> Result<WorldModel> {
    // Mirrored asymmetric clusters: geometry and colors both flip in x.
    let cluster = |mirror: f64| -> Vec<(Vec3, f64, [f64; 3])> {
        vec![
            ([mirror * -0.42, 0.05, 0.3], 0.30, [0.9, 0.25, 0.15]),
            ([mirror * 0.3, -0.1, -0.28], 0.28, [0.15, 0.4, 0.9]),
            ([mirror * 0.05, 0.32, 0.05], 0.24, [0.2, 0.85, 0.3]),
            ([mirror * -0.15, -0.3, -0.05], 0.22, [0.92, 0.85, 0.2]),
        ]
    };
    let prototypes = vec![
        Prototype {
            id: 0,
            object: ProtoObject::Grid(blob_grid(24, &cluster(1.0), 12.0)),
            prior: 0.5,
            label: Some("left".into()),
        },
        Prototype {
            id: 1,
            object: ProtoObject::Grid(blob_grid(24, &cluster(-1.0), 12.0)),
            prior: 0.5,
            label: Some("right".into()),
        },
    ];
    let cams = arc_cameras(&[20.0, 110.0, 200.0, 290.0], 3.5, 0.9, view_res);
    WorldModel::new(prototypes, cams, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_build() {
        for name in WORLD_PRESETS {
            let w = world_preset(name, 32).unwrap();
            assert!(w.n_prototypes() >= 2);
            assert!(w.cameras.len() >= 2);
        }
        assert!(world_preset("missing", 32).is_err());
    }

    #[test]
    fn mirrored_prototypes_are_distinct_but_balanced() {
        for name in ["bimodal-texture", "bimodal-splat"] {
            let w = world_preset(name, 48).unwrap();
            let a = w.rgb_render(0).unwrap();
            let b = w.rgb_render(1).unwrap();
            let dist = a.mean_abs_diff(&b).unwrap();
            assert!(dist > 0.01, "{name}: prototypes too similar ({dist})");
            // Mirror symmetry: view v of A should match the mirrored view
            // of B in total mass.
            let sum_a: f64 = a.data().iter().sum();
            let sum_b: f64 = b.data().iter().sum();
            assert!(
                (sum_a - sum_b).abs() / sum_a.abs().max(1.0) < 0.05,
                "{name}: unbalanced renders"
            );
        }
    }
}
