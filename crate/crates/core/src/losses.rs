//! Loss and metric formulas: RGBAD L1, rendering-loss time weighting,
//! L1.5 normal total variation, ray entropy with background correction,
//! Laplacian smoothing, normal consistency, depth distortion, MDD, and the
//! pipeline comparison metrics.

use crate::error::{Error, Result};
use crate::render::types::{RenderOutput, TriMesh};
use crate::sched::NoiseSchedule;
use crate::stack::ViewStack;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Non-negative weights for every loss term plus the RGBAD channel split.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub rgb: f64,
    pub alpha: f64,
    pub depth: f64,
    pub perceptual: f64,
    pub normal_tv: f64,
    pub entropy: f64,
    pub laplacian: f64,
    pub normal_consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rgb: 1.0,
            alpha: 1.0,
            depth: 0.1,
            perceptual: 1.0,
            normal_tv: 0.1,
            entropy: 0.01,
            laplacian: 0.1,
            normal_consistency: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.rgb,
            self.alpha,
            self.depth,
            self.perceptual,
            self.normal_tv,
            self.entropy,
            self.laplacian,
            self.normal_consistency,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Discretized per-ray contribution profile.
#[derive(Debug, Clone)]
pub struct RayProfile {
    pub taus: Vec<f64>,
    /// Contribution densities `p(tau_i) >= 0`.
    pub p: Vec<f64>,
    pub delta_tau: Vec<f64>,
    pub alpha: f64,
}

impl RayProfile {
    pub fn validate(&self) -> Result<()> {
        if self.taus.len() != self.p.len() || self.taus.len() != self.delta_tau.len() {
            return Err(Error::Structural("ray profile arrays disagree".into()));
        }
        let mass: f64 = self.p.iter().zip(&self.delta_tau).map(|(p, d)| p * d).sum();
        if (mass - self.alpha).abs() > 1e-6 {
            return Err(Error::Domain(format!(
                "profile mass {mass} vs alpha {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Profile from a render's per-pixel contributions with uniform spacing.
    pub fn from_contribs(contribs: &[(f64, f64)], delta: f64) -> Self {
        let alpha: f64 = contribs.iter().map(|&(w, _)| w).sum();
        Self {
            taus: contribs.iter().map(|&(_, t)| t).collect(),
            p: contribs.iter().map(|&(w, _)| w / delta).collect(),
            delta_tau: vec![delta; contribs.len()],
            alpha,
        }
    }
}

/// Channel-weighted mean absolute difference over RGB, alpha, and depth.
pub fn l1_rgbad(render: &RenderOutput, target: &RenderOutput, w: &LossWeights) -> Result<f64> {
    if render.width != target.width || render.height != target.height {
        return Err(Error::ShapeMismatch("l1_rgbad render vs target".into()));
    }
     
    let mean_abs = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
    };
    Ok(w.rgb * mean_abs(&render.rgb, &target.rgb)
        + w.alpha * mean_abs(&render.alpha, &target.alpha)
        + w.depth * mean_abs(&render.depth, &target.depth))
}

/// Gradients of [`l1_rgbad`] with respect to the render's channels.
pub fn l1_rgbad_bwd(
    render: &RenderOutput,
    target: &RenderOutput,
    w: &LossWeights,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let grad = |a: &[f64], b: &[f64], wt: f64| -> Vec<f64> {
        let n = a.len() as f64;
        a.iter()
            .zip(b)
            .map(|(x, y)| wt * (x - y).signum() * ((x - y) != 0.0) as i32 as f64 / n)
            .collect()
    };
    (
        grad(&render.rgb, &target.rgb, w.rgb),
        grad(&render.alpha, &target.alpha, w.alpha),
        grad(&render.depth, &target.depth, w.depth),
    )
}

/// Rendering-loss time weighting `alpha_t / sqrt(alpha_t^2 + sigma_t^2)`.
pub fn rend_weight(t: f64, sched: &NoiseSchedule) -> f64 {
    let a = sched.alpha(t);
    let s = sched.sigma(t);
    a / (a * a + s * s).sqrt()
}

const TV_EPS: f64 = 1e-6;

/// Smoothed |g|^1.5: `(|g|^2 + eps^2)^0.75 - eps^1.5`, exactly 0 at g = 0.
#[inline]
fn pow15(g2: f64) -> f64 {
    if g2 == 0.0 {
        return 0.0;
    }
    (g2 + TV_EPS * TV_EPS).powf(0.75) - TV_EPS.powf(1.5)
}

/// d pow15 / d g2.
#[inline]
fn pow15_d(g2: f64) -> f64 {
    0.75 * (g2 + TV_EPS * TV_EPS).powf(-0.25)
}

/// L1.5 total variation of a normal map under a foreground mask.
///
/// Per channel and pixel, the forward-difference gradient 2-vector is scaled
/// by the mask value at the base pixel; the sum of `|.|^1.5` norms follows.
pub fn normal_tv_l15(normal: &[f64], mask: &[f64], width: usize, height: usize) -> Result<f64> {
    let hw = width * height;
    if normal.len() != 3 * hw || mask.len() != hw {
        return Err(Error::ShapeMismatch("normal_tv_l15 buffers".into()));
    }
    let mut total = 0.0;
    for c in 0..3 {
        let plane = &normal[c * hw..(c + 1) * hw];
        for row in 0..height {
            for col in 0..width {
                let m = mask[row * width + col];
                if m == 0.0 {
                    continue;
                }
                let v = plane[row * width + col];
                let gx = if col + 1 < width {
                    m * (plane[row * width + col + 1] - v)
                } else {
                    0.0
                };
                let gy = if row + 1 < height {
                    m * (plane[(row + 1) * width + col] - v)
                } else {
                    0.0
                };
                total += pow15(gx * gx + gy * gy);
            }
        }
    }
    Ok(total)
}

/// Gradient of [`normal_tv_l15`] with respect to the normal map.
pub fn normal_tv_l15_bwd(
    normal: &[f64],
    mask: &[f64],
    width: usize,
    height: usize,
) -> Vec<f64> {
    let hw = width * height;
    let mut grad = vec![0.0; 3 * hw];
    for c in 0..3 {
        let plane = &normal[c * hw..(c + 1) * hw];
        let gplane = &mut grad[c * hw..(c + 1) * hw];
        for row in 0..height {
            for col in 0..width {
                let m = mask[row * width + col];
                if m == 0.0 {
                    continue;
                }
                let v = plane[row * width + col];
                let gx = if col + 1 < width {
                    m * (plane[row * width + col + 1] - v)
                } else {
                    0.0
                };
                let gy = if row + 1 < height {
                    m * (plane[(row + 1) * width + col] - v)
                } else {
                    0.0
                };
                let d = pow15_d(gx * gx + gy * gy);
                if col + 1 < width {
                    let dgx = d * 2.0 * gx * m;
                    gplane[row * width + col + 1] += dgx;
                    gplane[row * width + col] -= dgx;
                }
                if row + 1 < height {
                    let dgy = d * 2.0 * gy * m;
                    gplane[(row + 1) * width + col] += dgy;
                    gplane[row * width + col] -= dgy;
                }
            }
        }
    }
    grad
}

/// 3x3 min-filter erosion of a soft mask, `iterations` times.
pub fn erode_mask(mask: &[f64], width: usize, height: usize, iterations: usize) -> Vec<f64> {
    let mut cur = mask.to_vec();
    for _ in 0..iterations {
        let mut next = cur.clone();
        for row in 0..height {
            for col in 0..width {
                let mut m = f64::INFINITY;
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let r = row as i64 + dr;
                        let c = col as i64 + dc;
                        if r < 0 || c < 0 || r >= height as i64 || c >= width as i64 {
                            m = 0.0; // borders erode away
                        } else {
                            m = m.min(cur[r as usize * width + c as usize]);
                        }
                    }
                }
                next[row * width + col] = m;
            }
        }
        cur = next;
    }
    cur
}

/// Separable Gaussian blur with sigma in pixels (3-sigma kernel support).
pub fn gaussian_blur(img: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return img.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let ksum: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / ksum).collect();
    let mut tmp = vec![0.0; img.len()];
    for row in 0..height {
        for col in 0..width {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let c = (col as i64 + ki as i64 - radius).clamp(0, width as i64 - 1);
                acc += k * img[row * width + c as usize];
            }
            tmp[row * width + col] = acc;
        }
    }
    let mut out = vec![0.0; img.len()];
    for row in 0..height {
        for col in 0..width {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let r = (row as i64 + ki as i64 - radius).clamp(0, height as i64 - 1);
                acc += k * tmp[r as usize * width + col];
            }
            out[row * width + col] = acc;
        }
    }
    out
}

/// Ray entropy with background correction:
/// `-sum p_i log p_i dtau_i - (1 - a) log((1 - a) / d)`.
pub fn ray_entropy(ray: &RayProfile, d: f64) -> Result<f64> {
    if d <= 0.0 {
        return Err(Error::Domain("background thickness d must be > 0".into()));
    }
    let mut ent = 0.0;
    for (&p, &dt) in ray.p.iter().zip(&ray.delta_tau) {
        if p > 0.0 {
            ent -= p * p.ln() * dt;
        }
    }
    let bg = 1.0 - ray.alpha;
    if bg > 0.0 {
        ent -= bg * (bg / d).ln();
    }
    Ok(ent)
}

/// Mean squared uniform-Laplacian magnitude over non-isolated vertices.
pub fn laplacian_smoothing(mesh: &TriMesh) -> Result<f64> {
    if mesh.is_empty() {
        return Err(Error::Structural("laplacian of empty mesh".into()));
    }
    let n = mesh.vertices.len();
    let mut neighbor_sum = vec![[0.0f64; 3]; n];
    let mut degree = vec![0u32; n];
    let mut seen: HashMap<(usize, usize), ()> = HashMap::new();
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            let key = (a.min(b), a.max(b));
            if seen.insert(key, ()).is_none() {
                for c in 0..3 {
                    neighbor_sum[a][c] += mesh.vertices[b][c];
                    neighbor_sum[b][c] += mesh.vertices[a][c];
                }
                degree[a] += 1;
                degree[b] += 1;
            }
        }
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for v in 0..n {
        if degree[v] == 0 {
            continue;
        }
        let d = degree[v] as f64;
        let mut sq = 0.0;
        for c in 0..3 {
            let lap = neighbor_sum[v][c] / d - mesh.vertices[v][c];
            sq += lap * lap;
        }
        total += sq;
        count += 1;
    }
    Ok(total / count.max(1) as f64)
}

/// Mean `1 - cos(angle)` between normals of faces sharing an edge;
/// non-manifold edges contribute all adjacent pairs.
pub fn normal_consistency(mesh: &TriMesh) -> Result<f64> {
    if mesh.is_empty() {
        return Err(Error::Structural("normal consistency of empty mesh".into()));
    }
    let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            edge_faces.entry((a.min(b), a.max(b))).or_default().push(fi);
        }
    }
    let normals: Vec<[f64; 3]> = (0..mesh.faces.len()).map(|f| mesh.face_normal(f)).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for faces in edge_faces.values() {
        for i in 0..faces.len() {
            for j in i + 1..faces.len() {
                let (na, nb) = (normals[faces[i]], normals[faces[j]]);
                let cos = na[0] * nb[0] + na[1] * nb[1] + na[2] * nb[2];
                total += 1.0 - cos;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(total / count as f64)
}

/// Depth distortion of one pixel: `sum_{m,n} w_m w_n |tau_m - tau_n|`.
///
/// Computed via the sorted prefix-sum identity; equals the brute-force
/// double sum.
pub fn depth_distortion_pixel(contribs: &[(f64, f64)]) -> f64 {
    if contribs.len() < 2 {
        return 0.0;
    }
    let mut sorted: Vec<(f64, f64)> = contribs.to_vec();
    sorted.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let mut w_prefix = 0.0;
    let mut wt_prefix = 0.0;
    let mut total = 0.0;
    for &(w, t) in &sorted {
        total += 2.0 * w * (t * w_prefix - wt_prefix);
        w_prefix += w;
        wt_prefix += w * t;
    }
    total
}

/// Mean depth distortion of a view: per-pixel depth distortions summed and
/// divided by the summed alpha; 0 when nothing is covered.
pub fn mdd(render: &RenderOutput) -> Result<f64> {
    let contribs = render
        .contribs
        .as_ref()
        .ok_or_else(|| Error::Structural("mdd requires per-ray contributions".into()))?;
    let total_alpha: f64 = render.alpha.iter().sum();
    if total_alpha <= 0.0 {
        return Ok(0.0);
    }
    let total_ld: f64 = contribs.iter().map(|c| depth_distortion_pixel(c)).sum();
    Ok(total_ld / total_alpha)
}

const PERC_EPS: f64 = 0.1;
const PERC_WINDOW: i64 = 2;

fn box_stat(img: &[f64], width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
    // Local mean and mean-square over a (2*PERC_WINDOW+1)^2 clamped window.
    let mut mean = vec![0.0; width * height];
    let mut meansq = vec![0.0; width * height];
    for row in 0..height {
        for col in 0..width {
            let mut m = 0.0;
            let mut s = 0.0;
            let mut n = 0.0;
            for dr in -PERC_WINDOW..=PERC_WINDOW {
                for dc in -PERC_WINDOW..=PERC_WINDOW {
                    let r = (row as i64 + dr).clamp(0, height as i64 - 1) as usize;
                    let c = (col as i64 + dc).clamp(0, width as i64 - 1) as usize;
                    let v = img[r * width + c];
                    m += v;
                    s += v * v;
                    n += 1.0;
                }
            }
            mean[row * width + col] = m / n;
            meansq[row * width + col] = s / n;
        }
    }
    (mean, meansq)
}

fn contrast_normalize(img: &[f64], width: usize, height: usize) -> Vec<f64> {
    let (mean, meansq) = box_stat(img, width, height);
    img.iter()
        .enumerate()
        .map(|(i, &v)| {
            let var = (meansq[i] - mean[i] * mean[i]).max(0.0);
            (v - mean[i]) / (var.sqrt() + PERC_EPS)
        })
        .collect()
}

fn box_down2(img: &[f64], width: usize, height: usize) -> (Vec<f64>, usize, usize) {
    let (w2, h2) = (width / 2, height / 2);
    let mut out = vec![0.0; w2 * h2];
    for row in 0..h2 {
        for col in 0..w2 {
            out[row * w2 + col] = 0.25
                * (img[(2 * row) * width + 2 * col]
                    + img[(2 * row) * width + 2 * col + 1]
                    + img[(2 * row + 1) * width + 2 * col]
                    + img[(2 * row + 1) * width + 2 * col + 1]);
        }
    }
    (out, w2, h2)
}

/// Multi-scale mean squared error of local-contrast-normalized images.
/// Stand-in for a pretrained perceptual loss: insensitive to global
/// brightness, sensitive to structure.
pub fn patch_perceptual(a_rgb: &[f64], b_rgb: &[f64], width: usize, height: usize) -> Result<f64> {
    if a_rgb.len() != 3 * width * height || b_rgb.len() != a_rgb.len() {
        return Err(Error::ShapeMismatch("patch_perceptual buffers".into()));
    }
    let hw = width * height;
    let mut total = 0.0;
    let mut scales = 0.0f64;
    for c in 0..3 {
        let mut a: Vec<f64> = a_rgb[c * hw..(c + 1) * hw].to_vec();
        let mut b: Vec<f64> = b_rgb[c * hw..(c + 1) * hw].to_vec();
        let (mut w, mut h) = (width, height);
        for scale in 0..3 {
            if scale > 0 {
                if w < 4 || h < 4 {
                    break;
                }
                let (ad, w2, h2) = box_down2(&a, w, h);
                let (bd, _, _) = box_down2(&b, w, h);
                a = ad;
                b = bd;
                w = w2;
                h = h2;
            }
            let na = contrast_normalize(&a, w, h);
            let nb = contrast_normalize(&b, w, h);
            let mse: f64 = na
                .iter()
                .zip(&nb)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                / na.len() as f64;
            total += mse;
            scales += 1.0;
        }
    }
    Ok(total / scales.max(1.0))
}

struct ScaleStats {
    mean: Vec<f64>,
    sd: Vec<f64>,
    norm: Vec<f64>,
}

fn scale_stats(img: &[f64], width: usize, height: usize) -> ScaleStats {
    let (mean, meansq) = box_stat(img, width, height);
    let sd: Vec<f64> = mean
        .iter()
        .zip(&meansq)
        .map(|(m, q)| (q - m * m).max(0.0).sqrt())
        .collect();
    let norm = img
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - mean[i]) / (sd[i] + PERC_EPS))
        .collect();
    ScaleStats { mean, sd, norm }
}

/// Gradient of [`patch_perceptual`] with respect to the first image.
pub fn patch_perceptual_bwd(
    a_rgb: &[f64],
    b_rgb: &[f64],
    width: usize,
    height: usize,
) -> Vec<f64> {
    let hw = width * height;
    let mut grad = vec![0.0; 3 * hw];
    // Count channel-scale pairs exactly as the forward pass does.
    let mut n_pairs = 0usize;
    {
        let (mut w, mut h) = (width, height);
        for scale in 0..3 {
            if scale > 0 {
                if w < 4 || h < 4 {
                    break;
                }
                w /= 2;
                h /= 2;
            }
            n_pairs += 3;
        }
    }
    for c in 0..3 {
        // Build the downsample pyramid, then backpropagate scale by scale.
        let mut pyr_a: Vec<(Vec<f64>, usize, usize)> =
            vec![(a_rgb[c * hw..(c + 1) * hw].to_vec(), width, height)];
        let mut pyr_b: Vec<Vec<f64>> = vec![b_rgb[c * hw..(c + 1) * hw].to_vec()];
        for _ in 1..3 {
            let (a, w, h) = pyr_a.last().unwrap();
            if *w < 4 || *h < 4 {
                break;
            }
            let (ad, w2, h2) = box_down2(a, *w, *h);
            let (bd, _, _) = box_down2(pyr_b.last().unwrap(), *w, *h);
            pyr_a.push((ad, w2, h2));
            pyr_b.push(bd);
        }
        let mut d_scale: Vec<Vec<f64>> = pyr_a
            .iter()
            .map(|(a, _, _)| vec![0.0; a.len()])
            .collect();
        for (si, ((a, w, h), b)) in pyr_a.iter().zip(&pyr_b).enumerate() {
            let (w, h) = (*w, *h);
            let sa = scale_stats(a, w, h);
            let sb = scale_stats(b, w, h);
            let len = (w * h) as f64;
            let g: Vec<f64> = sa
                .norm
                .iter()
                .zip(&sb.norm)
                .map(|(x, y)| 2.0 * (x - y) / (len * n_pairs as f64))
                .collect();
            let d = &mut d_scale[si];
            for i in 0..w * h {
                d[i] += g[i] / (sa.sd[i] + PERC_EPS);
            }
            // Mean and std paths spread over the clamped window of i.
            for row in 0..h {
                for col in 0..w {
                    let i = row * w + col;
                    let gi = g[i];
                    if gi == 0.0 {
                        continue;
                    }
                    let win = ((2 * PERC_WINDOW + 1) * (2 * PERC_WINDOW + 1)) as f64;
                    let mean_coeff = -gi / ((sa.sd[i] + PERC_EPS) * win);
                    let sd_coeff = if sa.sd[i] > 0.0 {
                        -gi * (a[i] - sa.mean[i])
                            / ((sa.sd[i] + PERC_EPS) * (sa.sd[i] + PERC_EPS))
                            / (2.0 * sa.sd[i])
                    } else {
                        0.0
                    };
                    for dr in -PERC_WINDOW..=PERC_WINDOW {
                        for dc in -PERC_WINDOW..=PERC_WINDOW {
                            let r = (row as i64 + dr).clamp(0, h as i64 - 1) as usize;
                            let cc = (col as i64 + dc).clamp(0, w as i64 - 1) as usize;
                            let j = r * w + cc;
                            d[j] += mean_coeff;
                            if sd_coeff != 0.0 {
                                d[j] += sd_coeff * 2.0 * (a[j] - sa.mean[i]) / win;
                            }
                        }
                    }
                }
            }
        }
        // Collapse the pyramid: distribute each scale's gradient up to the
        // full-resolution plane.
        for si in (1..pyr_a.len()).rev() {
            let (_, w2, _) = pyr_a[si];
            let (_, w1, h1) = pyr_a[si - 1];
            let (src, dst) = {
                let (lo, hi) = d_scale.split_at_mut(si);
                (&hi[0], &mut lo[si - 1])
            };
            for row in 0..h1 / 2 {
                for col in 0..w1 / 2 {
                    let v = 0.25 * src[row * w2 + col];
                    dst[(2 * row) * w1 + 2 * col] += v;
                    dst[(2 * row) * w1 + 2 * col + 1] += v;
                    dst[(2 * row + 1) * w1 + 2 * col] += v;
                    dst[(2 * row + 1) * w1 + 2 * col + 1] += v;
                }
            }
        }
        grad[c * hw..(c + 1) * hw].copy_from_slice(&d_scale[0]);
    }
    grad
}

/// Minimum mean-absolute distance of a stack to a set of candidate renders;
/// ties break toward the lowest index.
pub fn mode_distance(x: &ViewStack, candidates: &[ViewStack]) -> Result<(f64, usize)> {
    if candidates.is_empty() {
        return Err(Error::Structural("mode_distance needs candidates".into()));
    }
    let mut best = (f64::INFINITY, 0usize);
    for (k, cand) in candidates.iter().enumerate() {
        let d = x.mean_abs_diff(cand)?;
        if d < best.0 {
            best = (d, k);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, rng_for};

    fn blank(w: usize, h: usize) -> RenderOutput {
        RenderOutput::new(w, h)
    }

    #[test]
    fn l1_rgbad_zero_and_offset() {
        let w = LossWeights::default();
        let a = blank(4, 4);
        assert_eq!(l1_rgbad(&a, &a, &w).unwrap(), 0.0);

        let mut b = blank(4, 4);
        for v in b.rgb.iter_mut() {
            *v = 0.1;
        }
        let only_rgb = LossWeights {
            rgb: 1.0,
            alpha: 0.0,
            depth: 0.0,
            ..Default::default()
        };
        let l = l1_rgbad(&b, &a, &only_rgb).unwrap();
        assert!((l - 0.1).abs() < 1e-12);
    }

    #[test]
    fn l1_rgbad_matches_direct_sum() {
        let mut rng = rng_for(1, 0);
        let mut a = blank(5, 3);
        let mut b = blank(5, 3);
        for v in a
            .rgb
            .iter_mut()
            .chain(a.alpha.iter_mut())
            .chain(a.depth.iter_mut())
        {
            *v = normal(&mut rng);
        }
        for v in b
            .rgb
            .iter_mut()
            .chain(b.alpha.iter_mut())
            .chain(b.depth.iter_mut())
        {
            *v = normal(&mut rng);
        }
        let w = LossWeights {
            rgb: 0.7,
            alpha: 1.3,
            depth: 0.2,
            ..Default::default()
        };
        let got = l1_rgbad(&a, &b, &w).unwrap();
        // Brute force.
        let mut want = 0.0;
        for i in 0..a.rgb.len() {
            want += 0.7 * (a.rgb[i] - b.rgb[i]).abs() / a.rgb.len() as f64;
        }
        for i in 0..a.alpha.len() {
            want += 1.3 * (a.alpha[i] - b.alpha[i]).abs() / a.alpha.len() as f64;
            want += 0.2 * (a.depth[i] - b.depth[i]).abs() / a.depth.len() as f64;
        }
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn rend_weight_values_and_monotone() {
        let sched = NoiseSchedule::variance_preserving();
        assert!((rend_weight(0.0, &sched) - 1.0).abs() < 1e-12);
        // alpha = sigma at t = T/2 on the cosine schedule.
        let w = rend_weight(0.5, &sched);
        assert!((w - 1.0 / (2.0f64).sqrt()).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let w = rend_weight(t, &sched);
            assert!(w <= prev + 1e-12);
            prev = w;
        }
    }

    #[test]
    fn tv_constant_zero_and_step_count() {
        let (w, h) = (6, 5);
        let normal = vec![0.3; 3 * w * h];
        let mask = vec![1.0; w * h];
        assert_eq!(normal_tv_l15(&normal, &mask, w, h).unwrap(), 0.0);

        // Unit step across one column in channel 0: gradient magnitude 1 at
        // the column left of the step, all rows.
        let mut stepped = vec![0.0; 3 * w * h];
        for row in 0..h {
            for col in 3..w {
                stepped[row * w + col] = 1.0;
            }
        }
        let l = normal_tv_l15(&stepped, &mask, w, h).unwrap();
        let smoothed_one = ((1.0f64 + TV_EPS * TV_EPS).powf(0.75) - TV_EPS.powf(1.5)) * h as f64;
        assert!((l - smoothed_one).abs() < 1e-9, "{l} vs {smoothed_one}");
    }

    #[test]
    fn tv_matches_brute_force_double_loop() {
        let (w, h) = (7, 6);
        let mut rng = rng_for(3, 0);
        let normal: Vec<f64> = (0..3 * w * h).map(|_| normal(&mut rng)).collect();
        let mask: Vec<f64> = (0..w * h)
            .map(|i| if i % 5 == 0 { 0.0 } else { 0.7 })
            .collect();
        let got = normal_tv_l15(&normal, &mask, w, h).unwrap();
        let mut want = 0.0;
        for c in 0..3 {
            for row in 0..h {
                for col in 0..w {
                    let m = mask[row * w + col];
                    let v = normal[c * w * h + row * w + col];
                    let gx = if col + 1 < w {
                        m * (normal[c * w * h + row * w + col + 1] - v)
                    } else {
                        0.0
                    };
                    let gy = if row + 1 < h {
                        m * (normal[c * w * h + (row + 1) * w + col] - v)
                    } else {
                        0.0
                    };
                    if m != 0.0 {
                        want += ((gx * gx + gy * gy) + TV_EPS * TV_EPS).powf(0.75)
                            - TV_EPS.powf(1.5);
                    }
                }
            }
        }
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn tv_gradient_of_constant_map_is_zero() {
        let (w, h) = (5, 5);
        let normal = vec![0.25; 3 * w * h];
        let mask = vec![1.0; w * h];
        let g = normal_tv_l15_bwd(&normal, &mask, w, h);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tv_gradient_matches_finite_differences() {
        let (w, h) = (5, 4);
        let mut rng = rng_for(4, 0);
        let normal: Vec<f64> = (0..3 * w * h).map(|_| 0.5 * normal(&mut rng)).collect();
        let mask: Vec<f64> = (0..w * h).map(|i| if i % 4 == 0 { 0.0 } else { 1.0 }).collect();
        let g = normal_tv_l15_bwd(&normal, &mask, w, h);
        let eps = 1e-6;
        for i in (0..normal.len()).step_by(7) {
            let mut p = normal.clone();
            p[i] += eps;
            let mut m = normal.clone();
            m[i] -= eps;
            let fd = (normal_tv_l15(&p, &mask, w, h).unwrap()
                - normal_tv_l15(&m, &mask, w, h).unwrap())
                / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-6 * fd.abs().max(1.0), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn entropy_empty_ray_and_uniform() {
        let empty = RayProfile {
            taus: vec![],
            p: vec![],
            delta_tau: vec![],
            alpha: 0.0,
        };
        assert_eq!(ray_entropy(&empty, 1.0).unwrap(), 0.0);

        // Uniform p = 1/L over length L with alpha = 1: entropy = ln L.
        let l = 2.5;
        let n = 1000;
        let profile = RayProfile {
            taus: (0..n).map(|i| (i as f64 + 0.5) * l / n as f64).collect(),
            p: vec![1.0 / l; n],
            delta_tau: vec![l / n as f64; n],
            alpha: 1.0,
        };
        profile.validate().unwrap();
        let e = ray_entropy(&profile, 1.0).unwrap();
        assert!((e - l.ln()).abs() < 1e-9, "{e} vs {}", l.ln());
    }

    #[test]
    fn entropy_delta_smaller_than_uniform() {
        // Near-delta and uniform profiles at equal alpha = 1, length 4.
        let l = 4.0;
        let n = 4000;
        let dt = l / n as f64;
        let uniform = RayProfile {
            taus: (0..n).map(|i| (i as f64 + 0.5) * dt).collect(),
            p: vec![1.0 / l; n],
            delta_tau: vec![dt; n],
            alpha: 1.0,
        };
        // Delta: all mass in one cell.
        let mut p = vec![0.0; n];
        p[n / 2] = 1.0 / dt;
        let delta = RayProfile {
            taus: uniform.taus.clone(),
            p,
            delta_tau: vec![dt; n],
            alpha: 1.0,
        };
        let eu = ray_entropy(&uniform, 1.0).unwrap();
        let ed = ray_entropy(&delta, 1.0).unwrap();
        assert!(eu - ed > 1.0, "uniform {eu} delta {ed}");
    }

    #[test]
    fn entropy_background_correction_continuous_at_full_alpha() {
        let base = RayProfile {
            taus: vec![1.0],
            p: vec![0.0],
            delta_tau: vec![1.0],
            alpha: 0.0,
        };
        // (1 - a) log((1 - a)/d) -> 0 as a -> 1 for any d > 0.
        for d in [0.5, 1.0, 3.0] {
            let mut prev = f64::NAN;
            for k in 1..8 {
                let a = 1.0 - 10.0f64.powi(-k);
                let profile = RayProfile {
                    p: vec![a],
                    alpha: a,
                    ..base.clone()
                };
                let e = ray_entropy(&profile, d).unwrap();
                let correction = e + a * a.ln(); // remove the p log p part
                if !prev.is_nan() {
                    assert!(correction.abs() < prev.abs() + 1e-12);
                }
                prev = correction;
            }
            assert!(prev.abs() < 1e-5, "correction {prev} for d {d}");
        }
        assert!(ray_entropy(&base, 0.0).is_err());
    }

    #[test]
    fn laplacian_flat_grid_interior_zero() {
        // Regular planar grid: interior vertices coincide with their
        // neighbor centroids.
        let n = 5;
        let mut mesh = TriMesh::default();
        for r in 0..n {
            for c in 0..n {
                mesh.vertices.push([c as f64, r as f64, 0.0]);
            }
        }
        for r in 0..n - 1 {
            for c in 0..n - 1 {
                let i = r * n + c;
                mesh.faces.push([i, i + 1, i + n + 1]);
                mesh.faces.push([i, i + n + 1, i + n]);
            }
        }
        // Displace one interior vertex off the plane by h.
        let h = 0.05;
        let center = 2 * n + 2;
        let flat = laplacian_smoothing(&mesh).unwrap();
        let mut bumped = mesh.clone();
        bumped.vertices[center][2] += h;
        let bump = laplacian_smoothing(&bumped).unwrap();
        // The displaced vertex's own term is h^2 (neighbors' centroids also
        // shift by h/deg each). Direct oracle on the bumped mesh:
        let mut neighbor: Vec<Vec<usize>> = vec![Vec::new(); bumped.vertices.len()];
        let mut seen = std::collections::HashSet::new();
        for f in &bumped.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if seen.insert((a.min(b), a.max(b))) {
                    neighbor[a].push(b);
                    neighbor[b].push(a);
                }
            }
        }
        let mut want = 0.0;
        let mut cnt = 0;
        for (v, nbrs) in neighbor.iter().enumerate() {
            if nbrs.is_empty() {
                continue;
            }
            let mut cen = [0.0; 3];
            for &nb in nbrs {
                for c in 0..3 {
                    cen[c] += bumped.vertices[nb][c];
                }
            }
            let mut sq = 0.0;
            for c in 0..3 {
                let l = cen[c] / nbrs.len() as f64 - bumped.vertices[v][c];
                sq += l * l;
            }
            want += sq;
            cnt += 1;
        }
        want /= cnt as f64;
        assert!((bump - want).abs() < 1e-12);
        assert!(bump > flat);
        assert!(flat >= 0.0);
    }

    #[test]
    fn normal_consistency_flat_and_folded() {
        let flat = TriMesh {
            vertices: vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [1.0, 1.0, 0.0],
                [0.0, 1.0, 0.0],
            ],
            faces: vec![[0, 1, 2], [0, 2, 3]],
            uv: None,
            texture: None,
        };
        assert!(normal_consistency(&flat).unwrap().abs() < 1e-12);

        // Fold the second triangle 90 degrees up around the shared edge
        // (0,0,0)-(1,1,0): cos between normals becomes 0.
        let folded = TriMesh {
            vertices: vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [1.0, 1.0, 0.0],
                // vertex 3 rotated about the (0,0)-(1,1) diagonal by 90 deg
                [0.5, 0.5, 1.0 / (2.0f64).sqrt()],
            ],
            faces: vec![[0, 1, 2], [0, 2, 3]],
            uv: None,
            texture: None,
        };
        let v = normal_consistency(&folded).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "folded consistency {v}");
    }

    #[test]
    fn normal_consistency_decreases_with_subdivision() {
        // Icosphere-style refinement: subdividing a coarse sphere mesh makes
        // adjacent faces more parallel.
        fn sphere_mesh(subdiv: usize) -> TriMesh {
            use crate::render::mc::marching_cubes;
            use crate::render::types::{Aabb, VolumeGrid};
            use crate::render::vec3::norm;
            let res = 8 + subdiv * 8;
            let mut g = VolumeGrid::new(res, Aabb::unit()).unwrap();
            g.fill(|p| ((0.5 + 3.0 * (0.7 - norm(p))).clamp(0.0, 1.0), [1.0; 3]));
            let mut m = marching_cubes(&g, 0.5);
            // Project vertices onto the sphere for a clean comparison.
            for v in m.vertices.iter_mut() {
                let n = norm(*v);
                for c in 0..3 {
                    v[c] *= 0.7 / n;
                }
            }
            m
        }
        let mut prev = f64::INFINITY;
        for s in 0..3 {
            let v = normal_consistency(&sphere_mesh(s)).unwrap();
            assert!(v < prev, "subdiv {s}: {v} !< {prev}");
            prev = v;
        }
    }

    #[test]
    fn depth_distortion_cases() {
        assert_eq!(depth_distortion_pixel(&[(0.7, 3.0)]), 0.0);
        let v = depth_distortion_pixel(&[(0.5, 1.0), (0.5, 2.0)]);
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn depth_distortion_matches_double_loop() {
        use rand::Rng as _;
        let mut rng = rng_for(6, 0);
        for _ in 0..50 {
            let n = rng.gen_range(2..12);
            let contribs: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.gen_range(0.0..0.3), rng.gen_range(0.5..5.0)))
                .collect();
            let got = depth_distortion_pixel(&contribs);
            let mut want = 0.0;
            for &(wm, tm) in &contribs {
                for &(wn, tn) in &contribs {
                    want += wm * wn * (tm - tn).abs();
                }
            }
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn depth_distortion_symmetry_and_quadratic_scaling() {
        let contribs = vec![(0.2, 1.0), (0.3, 2.5), (0.1, 0.7)];
        let mut perm = contribs.clone();
        perm.rotate_left(1);
        assert!(
            (depth_distortion_pixel(&contribs) - depth_distortion_pixel(&perm)).abs() < 1e-15
        );
        let scaled: Vec<(f64, f64)> = contribs.iter().map(|&(w, t)| (3.0 * w, t)).collect();
        let a = depth_distortion_pixel(&contribs);
        let b = depth_distortion_pixel(&scaled);
        assert!((b - 9.0 * a).abs() < 1e-12);
    }

    #[test]
    fn mdd_single_surface_and_constant_case() {
        let mut r = blank(2, 2);
        r.contribs = Some(vec![vec![(1.0, 2.0)]; 4]);
        r.alpha = vec![1.0; 4];
        assert_eq!(mdd(&r).unwrap(), 0.0);

        // Every pixel has w = (0.5, 0.5), gap 1, alpha 1 -> MDD = 0.5.
        let mut r = blank(3, 3);
        r.contribs = Some(vec![vec![(0.5, 1.0), (0.5, 2.0)]; 9]);
        r.alpha = vec![1.0; 9];
        assert!((mdd(&r).unwrap() - 0.5).abs() < 1e-12);

        let empty = blank(2, 2);
        assert!(mdd(&empty).is_err());
    }

    #[test]
    fn mdd_pixel_permutation_invariant_and_floater_sensitive() {
        let mut rng = rng_for(8, 0);
        use rand::Rng as _;
        let mut base = blank(4, 1);
        let mut lists = Vec::new();
        for _ in 0..4 {
            let n = rng.gen_range(1..5);
            lists.push(
                (0..n)
                    .map(|_| (rng.gen_range(0.05..0.3), rng.gen_range(1.0..3.0)))
                    .collect::<Vec<_>>(),
            );
        }
        base.alpha = lists
            .iter()
            .map(|l: &Vec<(f64, f64)>| l.iter().map(|&(w, _)| w).sum())
            .collect();
        base.contribs = Some(lists.clone());
        let v1 = mdd(&base).unwrap();

        let mut permuted = base.clone();
        let mut pl = lists.clone();
        pl.rotate_left(2);
        permuted.contribs = Some(pl);
        permuted.alpha.rotate_left(2);
        assert!((mdd(&permuted).unwrap() - v1).abs() < 1e-12);

        // Injected floater far from the surface raises MDD.
        let mut floater = base.clone();
        if let Some(ls) = floater.contribs.as_mut() {
            ls[0].push((0.1, 10.0));
        }
        floater.alpha[0] += 0.1;
        assert!(mdd(&floater).unwrap() > v1);
    }

    #[test]
    fn perceptual_identical_zero_symmetric_brightness() {
        let (w, h) = (16, 16);
        let mut rng = rng_for(9, 0);
        let a: Vec<f64> = (0..3 * w * h).map(|_| 0.5 + 0.1 * normal(&mut rng)).collect();
        assert_eq!(patch_perceptual(&a, &a, w, h).unwrap(), 0.0);

        // Global brightness shift vs equal-energy high-frequency noise.
        let shift = 0.2;
        let bright: Vec<f64> = a.iter().map(|v| v + shift).collect();
        let noisy: Vec<f64> = a
            .iter()
            .enumerate()
            .map(|(i, v)| v + if i % 2 == 0 { shift } else { -shift })
            .collect();
        let l_bright = patch_perceptual(&a, &bright, w, h).unwrap();
        let l_noisy = patch_perceptual(&a, &noisy, w, h).unwrap();
        assert!(
            l_bright < l_noisy,
            "brightness {l_bright} !< noise {l_noisy}"
        );

        // Symmetry.
        let ab = patch_perceptual(&a, &noisy, w, h).unwrap();
        let ba = patch_perceptual(&noisy, &a, w, h).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn perceptual_gradient_matches_finite_differences() {
        let (w, h) = (12, 10);
        let mut rng = rng_for(21, 0);
        let a: Vec<f64> = (0..3 * w * h).map(|_| 0.5 + 0.2 * normal(&mut rng)).collect();
        let b: Vec<f64> = (0..3 * w * h).map(|_| 0.5 + 0.2 * normal(&mut rng)).collect();
        let g = patch_perceptual_bwd(&a, &b, w, h);
        let eps = 1e-6;
        for i in (0..a.len()).step_by(17) {
            let mut p = a.clone();
            p[i] += eps;
            let mut m = a.clone();
            m[i] -= eps;
            let fd = (patch_perceptual(&p, &b, w, h).unwrap()
                - patch_perceptual(&m, &b, w, h).unwrap())
                / (2.0 * eps);
            let rel = (fd - g[i]).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-4, "{i}: fd {fd} vs analytic {}", g[i]);
        }
    }

    #[test]
    fn mode_distance_cases() {
        use crate::stack::StackShape;
        let shape = StackShape {
            views: 1,
            channels: 3,
            height: 2,
            width: 2,
        };
        let a = ViewStack::constant(shape, 0.2);
        let b = ViewStack::constant(shape, 0.8);
        let (d, k) = mode_distance(&a, &[a.clone(), b.clone()]).unwrap();
        assert_eq!((d, k), (0.0, 0));

        // Midpoint of two equidistant candidates: ties break low.
        let mid = a.affine(0.5, &b, 0.5).unwrap();
        let (d, k) = mode_distance(&mid, &[a.clone(), b.clone()]).unwrap();
        assert!((d - 0.3).abs() < 1e-12);
        assert_eq!(k, 0);

        // Random stack matches brute force.
        let mut rng = rng_for(10, 0);
        let x = ViewStack::noise(shape, &mut rng);
        let cands = [a, b, ViewStack::constant(shape, -0.4)];
        let (d, k) = mode_distance(&x, &cands).unwrap();
        let mut want = (f64::INFINITY, 0);
        for (i, c) in cands.iter().enumerate() {
            let dd = x.mean_abs_diff(c).unwrap();
            if dd < want.0 {
                want = (dd, i);
            }
        }
        assert_eq!((d, k), want);
    }
}
