//! Depth-sorted front-to-back compositing of isotropic Gaussian splats.
//!
//! Each splat projects to a screen-space Gaussian footprint with a 3-sigma
//! cutoff; the blending weight of the m-th splat on a pixel is
//! `w_m = a_m * prod_{j<m} (1 - a_j)` in depth order.

use super::camera::Camera;
use super::normals::normals_from_depth;
use super::types::{RenderOutput, SplatSet};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct SplatOptions {
    pub background: [f64; 3],
    pub contribs: bool,
    pub weight_floor: f64,
    pub normal_threshold: f64,
    /// Per-pixel opacity ceiling; keeps transmittance strictly positive.
    pub opacity_cap: f64,
}

impl Default for SplatOptions {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            contribs: false,
            weight_floor: 1e-12,
            normal_threshold: 0.5,
            opacity_cap: 1.0 - 1e-9,
        }
    }
}

/// Renders a splat set; contribution lists are stored front to back.
pub fn composite_splats(splats: &SplatSet, cam: &Camera, opts: &SplatOptions) -> Result<RenderOutput> {
    cam.validate()?;
    splats.validate()?;
    let (w, h) = (cam.width, cam.height);
    let hw = w * h;
    let mut out = RenderOutput::new(w, h);
    let mut transmittance = vec![1.0f64; hw];
    let mut depth_num = vec![0.0f64; hw];
    let mut contribs: Option<Vec<Vec<(f64, f64)>>> = opts.contribs.then(|| vec![Vec::new(); hw]);

    // Depth sort, front to back; ties broken by index for determinism.
    let mut order: Vec<(f64, usize)> = (0..splats.len())
        .filter_map(|m| {
            let q = cam.to_camera(splats.centers[m]);
            (q[2] > 1e-9).then_some((q[2], m))
        })
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    for (z, m) in order {
        let q = cam.to_camera(splats.centers[m]);
        let u = cam.focal * q[0] / q[2] + cam.principal[0];
        let v = cam.focal * q[1] / q[2] + cam.principal[1];
        let sigma_px = splats.scales[m] * cam.focal / q[2];
        let radius = 3.0 * sigma_px;
        let col_lo = ((u - radius).floor().max(0.0)) as usize;
        let col_hi = ((u + radius).ceil().min(w as f64 - 1.0)) as usize;
        let row_lo = ((v - radius).floor().max(0.0)) as usize;
        let row_hi = ((v + radius).ceil().min(h as f64 - 1.0)) as usize;
        if u + radius < 0.0 || v + radius < 0.0 || u - radius > w as f64 || v - radius > h as f64 {
            continue;
        }
        let color = splats.colors[m];
        for row in row_lo..=row_hi {
            for col in col_lo..=col_hi {
                let dx = col as f64 + 0.5 - u;
                let dy = row as f64 + 0.5 - v;
                let d2 = dx * dx + dy * dy;
                if d2 > radius * radius {
                    continue;
                }
                let a = (splats.opacities[m] * (-d2 / (2.0 * sigma_px * sigma_px)).exp())
                    .min(opts.opacity_cap);
                if a <= 0.0 {
                    continue;
                }
                let px = row * w + col;
                let weight = transmittance[px] * a;
                for ch in 0..3 {
                    out.rgb[ch * hw + px] += weight * color[ch];
                }
                out.alpha[px] += weight;
                depth_num[px] += weight * z;
                if let Some(lists) = contribs.as_mut() {
                    if weight > opts.weight_floor {
                        lists[px].push((weight, z));
                    }
                }
                transmittance[px] *= 1.0 - a;
            }
        }
    }

    for px in 0..hw {
        for ch in 0..3 {
            out.rgb[ch * hw + px] += (1.0 - out.alpha[px]) * opts.background[ch];
        }
        out.depth[px] = if out.alpha[px] > 0.0 {
            depth_num[px] / out.alpha[px].max(1e-6)
        } else {
            0.0
        };
    }
    out.normal = normals_from_depth(&out.depth, &out.alpha, cam, opts.normal_threshold);
    out.contribs = contribs;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head_on_cam(res: usize) -> Camera {
        Camera::look_at(
            [0.0, -4.0, 0.0],
            [0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0],
            res as f64 * 2.0,
            res,
            res,
        )
    }

    #[test]
    fn single_opaque_splat_center_pixel() {
        // An odd-resolution camera has a pixel centered on the principal
        // axis; a splat on the axis hits it at full footprint strength.
        let res = 9;
        let cam = head_on_cam(res);
        let mut splats = SplatSet::default();
        splats.push([0.0, 0.0, 0.0], 0.5, 0.8, [1.0, 0.0, 0.0]);
        let opts = SplatOptions {
            contribs: true,
            ..Default::default()
        };
        let out = composite_splats(&splats, &cam, &opts).unwrap();
        let px = out.pixel(4, 4);
        let lists = &out.contribs.as_ref().unwrap()[px];
        assert_eq!(lists.len(), 1);
        let (wgt, tau) = lists[0];
        assert!((wgt - 0.8).abs() < 1e-12, "weight {wgt}");
        assert!((tau - 4.0).abs() < 1e-9, "depth {tau}");
    }

    #[test]
    fn two_splats_compositing_arithmetic() {
        let res = 9;
        let cam = head_on_cam(res);
        let mut splats = SplatSet::default();
        // Both on the camera axis; camera is 4 units away along -y and the
        // axis depth grows toward +y.
        splats.push([0.0, 0.0, 0.0], 0.5, 0.5, [1.0, 0.0, 0.0]);
        splats.push([0.0, 1.0, 0.0], 0.5, 0.5, [0.0, 1.0, 0.0]);
        let opts = SplatOptions {
            contribs: true,
            ..Default::default()
        };
        let out = composite_splats(&splats, &cam, &opts).unwrap();
        let px = out.pixel(4, 4);
        let lists = &out.contribs.as_ref().unwrap()[px];
        assert_eq!(lists.len(), 2);
        assert!((lists[0].0 - 0.5).abs() < 1e-12);
        assert!((lists[0].1 - 4.0).abs() < 1e-9);
        assert!((lists[1].0 - 0.25).abs() < 1e-12);
        assert!((lists[1].1 - 5.0).abs() < 1e-9);
        assert!((out.alpha[px] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn alpha_identity_against_product_oracle() {
        use crate::rng::rng_for;
        use rand::Rng as _;
        let res = 16;
        let cam = head_on_cam(res);
        let mut rng = rng_for(42, 0);
        let mut splats = SplatSet::default();
        for _ in 0..20 {
            splats.push(
                [
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-0.8..0.8),
                ],
                rng.gen_range(0.1..0.5),
                rng.gen_range(0.1..0.9),
                [rng.gen(), rng.gen(), rng.gen()],
            );
        }
        let opts = SplatOptions::default();
        let out = composite_splats(&splats, &cam, &opts).unwrap();

        // Oracle: alpha = 1 - prod(1 - a_m) with the same footprint rule.
        for row in 0..res {
            for col in 0..res {
                let mut prod = 1.0;
                for m in 0..splats.len() {
                    let q = cam.to_camera(splats.centers[m]);
                    if q[2] <= 1e-9 {
                        continue;
                    }
                    let u = cam.focal * q[0] / q[2] + cam.principal[0];
                    let v = cam.focal * q[1] / q[2] + cam.principal[1];
                    let sigma_px = splats.scales[m] * cam.focal / q[2];
                    let dx = col as f64 + 0.5 - u;
                    let dy = row as f64 + 0.5 - v;
                    let d2 = dx * dx + dy * dy;
                    if d2 > 9.0 * sigma_px * sigma_px {
                        continue;
                    }
                    let a = (splats.opacities[m] * (-d2 / (2.0 * sigma_px * sigma_px)).exp())
                        .min(1.0 - 1e-9);
                    prod *= 1.0 - a;
                }
                let want = 1.0 - prod;
                let got = out.alpha[row * res + col];
                assert!((got - want).abs() < 1e-9, "pixel ({row},{col})");
            }
        }
    }

    #[test]
    fn order_invariance_under_input_permutation() {
        use crate::rng::rng_for;
        use rand::Rng as _;
        let res = 12;
        let cam = head_on_cam(res);
        let mut rng = rng_for(9, 0);
        let mut splats = SplatSet::default();
        for _ in 0..10 {
            splats.push(
                [
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ],
                rng.gen_range(0.2..0.4),
                rng.gen_range(0.2..0.8),
                [rng.gen(), rng.gen(), rng.gen()],
            );
        }
        let mut reversed = SplatSet::default();
        for m in (0..splats.len()).rev() {
            reversed.push(
                splats.centers[m],
                splats.scales[m],
                splats.opacities[m],
                splats.colors[m],
            );
        }
        let opts = SplatOptions::default();
        let a = composite_splats(&splats, &cam, &opts).unwrap();
        let b = composite_splats(&reversed, &cam, &opts).unwrap();
        for (x, y) in a.rgb.iter().zip(&b.rgb) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in a.alpha.iter().zip(&b.alpha) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
