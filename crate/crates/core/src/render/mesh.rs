//! Triangle-mesh raycasting with a uniform-grid accelerator.

use super::camera::Camera;
use super::types::{Aabb, RenderOutput, TriMesh};
use super::vec3::{add, cross, dot, scale, sub, Vec3};
use crate::error::Result;

/// A ray-triangle intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshHit {
    pub face: usize,
    /// Barycentric coordinates of vertices 1 and 2 (vertex 0 gets 1-u-v).
    pub u: f64,
    pub v: f64,
    /// Ray parameter (z-depth with unit-z camera rays).
    pub t: f64,
}

/// Uniform-grid spatial index over mesh triangles.
pub struct MeshRaycaster<'a> {
    mesh: &'a TriMesh,
    bounds: Aabb,
    dims: [usize; 3],
    cell: Vec3,
    cells: Vec<Vec<u32>>,
}

impl<'a> MeshRaycaster<'a> {
    pub fn new(mesh: &'a TriMesh) -> Self {
        let mut bounds = mesh.bounds();
        if mesh.vertices.is_empty() {
            bounds = Aabb::unit();
        }
        // Pad to avoid boundary-face misses.
        for a in 0..3 {
            let pad = 1e-9 + 1e-6 * (bounds.max[a] - bounds.min[a]).abs();
            bounds.min[a] -= pad;
            bounds.max[a] += pad;
        }
        let target = ((2 * mesh.faces.len().max(1)) as f64).cbrt().ceil() as usize;
        let dims = [target.clamp(1, 48); 3];
        let e = bounds.extent();
        let cell = [
            e[0] / dims[0] as f64,
            e[1] / dims[1] as f64,
            e[2] / dims[2] as f64,
        ];
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for (fi, f) in mesh.faces.iter().enumerate() {
            let mut lo = [usize::MAX; 3];
            let mut hi = [0usize; 3];
            for a in 0..3 {
                let min_c = f
                    .iter()
                    .map(|&vi| mesh.vertices[vi][a])
                    .fold(f64::INFINITY, f64::min);
                let max_c = f
                    .iter()
                    .map(|&vi| mesh.vertices[vi][a])
                    .fold(f64::NEG_INFINITY, f64::max);
                lo[a] = (((min_c - bounds.min[a]) / cell[a]).floor().max(0.0) as usize)
                    .min(dims[a] - 1);
                hi[a] = (((max_c - bounds.min[a]) / cell[a]).floor().max(0.0) as usize)
                    .min(dims[a] - 1);
            }
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        cells[(z * dims[1] + y) * dims[0] + x].push(fi as u32);
                    }
                }
            }
        }
        Self {
            mesh,
            bounds,
            dims,
            cell,
            cells,
        }
    }

    fn intersect_tri(&self, face: usize, o: Vec3, d: Vec3, t_min: f64) -> Option<MeshHit> {
        let [ia, ib, ic] = self.mesh.faces[face];
        let a = self.mesh.vertices[ia];
        let e1 = sub(self.mesh.vertices[ib], a);
        let e2 = sub(self.mesh.vertices[ic], a);
        let p = cross(d, e2);
        let det = dot(e1, p);
        if det.abs() < 1e-14 {
            return None;
        }
        let inv = 1.0 / det;
        let s = sub(o, a);
        let u = dot(s, p) * inv;
        if !(-1e-12..=1.0 + 1e-12).contains(&u) {
            return None;
        }
        let q = cross(s, e1);
        let v = dot(d, q) * inv;
        if v < -1e-12 || u + v > 1.0 + 1e-12 {
            return None;
        }
        let t = dot(e2, q) * inv;
        (t > t_min).then_some(MeshHit { face, u, v, t })
    }

    /// Nearest hit along `o + t d` with `t > t_min`.
    pub fn cast(&self, o: Vec3, d: Vec3, t_min: f64) -> Option<MeshHit> {
        if self.mesh.faces.is_empty() {
            return None;
        }
        let (t0, t1) = self.bounds.clip_ray(o, d, t_min)?;
        // 3D-DDA over grid cells.
        let start = add(o, scale(d, t0 + 1e-12));
        let mut idx = [0usize; 3];
        let mut t_next = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        let mut step = [0isize; 3];
        for a in 0..3 {
            let g = ((start[a] - self.bounds.min[a]) / self.cell[a]).floor();
            idx[a] = (g.max(0.0) as usize).min(self.dims[a] - 1);
            if d[a] > 0.0 {
                step[a] = 1;
                let edge = self.bounds.min[a] + (idx[a] + 1) as f64 * self.cell[a];
                t_next[a] = (edge - o[a]) / d[a];
                t_delta[a] = self.cell[a] / d[a];
            } else if d[a] < 0.0 {
                step[a] = -1;
                let edge = self.bounds.min[a] + idx[a] as f64 * self.cell[a];
                t_next[a] = (edge - o[a]) / d[a];
                t_delta[a] = -self.cell[a] / d[a];
            }
        }
        let mut best: Option<MeshHit> = None;
        loop {
            let cell = &self.cells[(idx[2] * self.dims[1] + idx[1]) * self.dims[0] + idx[0]];
            for &fi in cell {
                if let Some(hit) = self.intersect_tri(fi as usize, o, d, t_min) {
                    if best.map_or(true, |b| hit.t < b.t) {
                        best = Some(hit);
                    }
                }
            }
            // Exit parameter of the current cell.
            let t_exit = t_next[0].min(t_next[1]).min(t_next[2]);
            if let Some(b) = best {
                if b.t <= t_exit + 1e-12 {
                    return best;
                }
            }
            if t_exit > t1 {
                return best;
            }
            // Advance the axis with the nearest boundary.
            let axis = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
                0
            } else if t_next[1] <= t_next[2] {
                1
            } else {
                2
            };
            let ni = idx[axis] as isize + step[axis];
            if ni < 0 || ni >= self.dims[axis] as isize {
                return best;
            }
            idx[axis] = ni as usize;
            t_next[axis] += t_delta[axis];
        }
    }

    /// Hit point in world coordinates.
    pub fn hit_point(&self, hit: &MeshHit) -> Vec3 {
        let [ia, ib, ic] = self.mesh.faces[hit.face];
        let (a, b, c) = (
            self.mesh.vertices[ia],
            self.mesh.vertices[ib],
            self.mesh.vertices[ic],
        );
        let w = 1.0 - hit.u - hit.v;
        [
            w * a[0] + hit.u * b[0] + hit.v * c[0],
            w * a[1] + hit.u * b[1] + hit.v * c[1],
            w * a[2] + hit.u * b[2] + hit.v * c[2],
        ]
    }

    /// Interpolated UV at a hit, if the mesh carries UVs.
    pub fn hit_uv(&self, hit: &MeshHit) -> Option<[f64; 2]> {
        let uv = self.mesh.uv.as_ref()?;
        let [ia, ib, ic] = self.mesh.faces[hit.face];
        let w = 1.0 - hit.u - hit.v;
        Some([
            w * uv[ia][0] + hit.u * uv[ib][0] + hit.v * uv[ic][0],
            w * uv[ia][1] + hit.u * uv[ib][1] + hit.v * uv[ic][1],
        ])
    }
}

/// Per-pixel hit map for a camera.
pub fn cast_camera(mesh: &TriMesh, cam: &Camera) -> Vec<Option<MeshHit>> {
    let caster = MeshRaycaster::new(mesh);
    let mut hits = Vec::with_capacity(cam.width * cam.height);
    for row in 0..cam.height {
        for col in 0..cam.width {
            let (o, d) = cam.ray(row, col);
            hits.push(caster.cast(o, d, 1e-9));
        }
    }
    hits
}

/// Renders a mesh with a caller-provided surface color function of
/// `(hit, world point)`. Alpha is binary; normals are geometric face
/// normals oriented toward the camera (camera space).
pub fn render_mesh_with(
    mesh: &TriMesh,
    cam: &Camera,
    background: [f64; 3],
    color: &dyn Fn(&MeshHit, Vec3) -> [f64; 3],
) -> Result<(RenderOutput, Vec<Option<MeshHit>>)> {
    cam.validate()?;
    let caster = MeshRaycaster::new(mesh);
    let (w, h) = (cam.width, cam.height);
    let hw = w * h;
    let mut out = RenderOutput::new(w, h);
    let mut hits = vec![None; hw];
    let mut contribs = vec![Vec::new(); hw];
    for row in 0..h {
        for col in 0..w {
            let px = row * w + col;
            let (o, d) = cam.ray(row, col);
            match caster.cast(o, d, 1e-9) {
                None => {
                    for ch in 0..3 {
                        out.rgb[ch * hw + px] = background[ch];
                    }
                }
                Some(hit) => {
                    let p = caster.hit_point(&hit);
                    let c = color(&hit, p);
                    for ch in 0..3 {
                        out.rgb[ch * hw + px] = c[ch];
                    }
                    out.alpha[px] = 1.0;
                    out.depth[px] = hit.t;
                    contribs[px].push((1.0, hit.t));
                    // Face normal, rotated to camera space, toward camera.
                    let n = mesh.face_normal(hit.face);
                    let r = &cam.rotation;
                    let mut nc = [
                        r[0][0] * n[0] + r[0][1] * n[1] + r[0][2] * n[2],
                        r[1][0] * n[0] + r[1][1] * n[1] + r[1][2] * n[2],
                        r[2][0] * n[0] + r[2][1] * n[1] + r[2][2] * n[2],
                    ];
                    if dot(nc, cam.dir_camera(row, col)) > 0.0 {
                        nc = scale(nc, -1.0);
                    }
                    out.normal[px] = nc[0];
                    out.normal[hw + px] = nc[1];
                    out.normal[2 * hw + px] = nc[2];
                    hits[px] = Some(hit);
                }
            }
        }
    }
    out.contribs = Some(contribs);
    Ok((out, hits))
}

/// Renders a mesh using its own UV texture (nearest-texel sampling).
pub fn render_mesh_textured(
    mesh: &TriMesh,
    cam: &Camera,
    background: [f64; 3],
) -> Result<RenderOutput> {
    let caster = MeshRaycaster::new(mesh);
    let (out, _) = render_mesh_with(mesh, cam, background, &|hit, _p| {
        match (&mesh.texture, caster.hit_uv(hit)) {
            (Some(tex), Some(uv)) => tex.sample_nearest(uv[0], uv[1]),
            _ => [0.7, 0.7, 0.7],
        }
    })?;
    Ok(out)
}

/// Two-triangle quad: centered at `center`, spanned by half-extent axes
/// `u_axis` and `v_axis`, with UVs covering [0,1]^2.
pub fn quad_mesh(center: Vec3, u_axis: Vec3, v_axis: Vec3) -> TriMesh {
    let corners = [
        sub(sub(center, u_axis), v_axis), // uv (0,0)
        sub(add(center, u_axis), v_axis), // uv (1,0)
        add(add(center, u_axis), v_axis), // uv (1,1)
        add(sub(center, u_axis), v_axis), // uv (0,1)
    ];
    TriMesh {
        vertices: corners.to_vec(),
        faces: vec![[0, 1, 2], [0, 2, 3]],
        uv: Some(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
        texture: None,
    }
}
