//! ReconState checkpoints: the `recon-v1` binary container.
//!
//! Layout (little-endian):
//!   magic "RECONV1\0", version u32 = 1, phase u8, step_count u64,
//!   grid resolution u32, bounds 6 x f64,
//!   4 length-prefixed f64 arrays (theta_density, theta_color, adam moments
//!   m_d, v_d, m_c, v_c -> 6 arrays total), adam t u64,
//!   mesh flag u8 (+ vertex/face arrays), quad texture flag u8 (+ dims and
//!   data array).

use super::grid::{AdamState, GridParams, Moments};
use super::state::{Phase, ReconState};
use crate::error::{Error, Result};
use crate::render::types::{Aabb, TextureImage, TriMesh};
use std::io::{Read, Write};

const MAGIC: &[u8; 8] = b"RECONV1\0";
const VERSION: u32 = 1;
/// Sanity bound on array lengths (1 GiB of f64).
const MAX_LEN: u64 = 1 << 27;

fn write_array(w: &mut impl Write, a: &[f64]) -> Result<()> {
    w.write_all(&(a.len() as u64).to_le_bytes())?;
    for v in a {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_array(r: &mut impl Read, expect: Option<usize>) -> Result<Vec<f64>> {
    let len = read_u64(r)?;
    if len > MAX_LEN {
        return Err(Error::Parse(format!("array length {len} too large")));
    }
    if let Some(e) = expect {
        if len as usize != e {
            return Err(Error::Parse(format!("array length {len}, expected {e}")));
        }
    }
    let mut out = Vec::with_capacity(len as usize);
    for _ in 0..len {
        out.push(read_f64(r)?);
    }
    Ok(out)
}

pub fn write_checkpoint(w: &mut impl Write, state: &ReconState) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let phase = match state.phase {
        Phase::Nerf => 0u8,
        Phase::Mesh => 1,
        Phase::Texture => 2,
    };
    w.write_all(&[phase])?;
    w.write_all(&state.step_count.to_le_bytes())?;
    w.write_all(&(state.params.resolution as u32).to_le_bytes())?;
    for v in state.params.bounds.min.iter().chain(&state.params.bounds.max) {
        w.write_all(&v.to_le_bytes())?;
    }
    write_array(w, &state.params.theta_density)?;
    write_array(w, &state.params.theta_color)?;
    write_array(w, &state.adam.density.m)?;
    write_array(w, &state.adam.density.v)?;
    write_array(w, &state.adam.color.m)?;
    write_array(w, &state.adam.color.v)?;
    w.write_all(&state.adam.t.to_le_bytes())?;
    match &state.mesh {
        None => w.write_all(&[0u8])?,
        Some(mesh) => {
            w.write_all(&[1u8])?;
            w.write_all(&(mesh.vertices.len() as u64).to_le_bytes())?;
            for v in &mesh.vertices {
                for c in v {
                    w.write_all(&c.to_le_bytes())?;
                }
            }
            w.write_all(&(mesh.faces.len() as u64).to_le_bytes())?;
            for f in &mesh.faces {
                for &i in f {
                    w.write_all(&(i as u64).to_le_bytes())?;
                }
            }
        }
    }
    match &state.quad_texture {
        None => w.write_all(&[0u8])?,
        Some(tex) => {
            w.write_all(&[1u8])?;
            w.write_all(&(tex.width as u32).to_le_bytes())?;
            w.write_all(&(tex.height as u32).to_le_bytes())?;
            write_array(w, &tex.data)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<ReconState> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("bad checkpoint magic".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let phase = match read_u8(r)? {
        0 => Phase::Nerf,
        1 => Phase::Mesh,
        2 => Phase::Texture,
        p => return Err(Error::Parse(format!("unknown phase tag {p}"))),
    };
    let step_count = read_u64(r)?;
    let resolution = read_u32(r)? as usize;
    if !(2..=512).contains(&resolution) {
        return Err(Error::Parse(format!("resolution {resolution} out of range")));
    }
    let mut bounds = Aabb {
        min: [0.0; 3],
        max: [0.0; 3],
    };
    for i in 0..3 {
        bounds.min[i] = read_f64(r)?;
    }
    for i in 0..3 {
        bounds.max[i] = read_f64(r)?;
    }
    if bounds
        .min
        .iter()
        .chain(&bounds.max)
        .any(|v| !v.is_finite())
    {
        return Err(Error::Parse("non-finite bounds".into()));
    }
    let n3 = resolution * resolution * resolution;
    let theta_density = read_array(r, Some(n3))?;
    let theta_color = read_array(r, Some(3 * n3))?;
    let m_d = read_array(r, Some(n3))?;
    let v_d = read_array(r, Some(n3))?;
    let m_c = read_array(r, Some(3 * n3))?;
    let v_c = read_array(r, Some(3 * n3))?;
    let adam_t = read_u64(r)?;
    let mesh = match read_u8(r)? {
        0 => None,
        1 => {
            let nv = read_u64(r)?;
            if nv > MAX_LEN {
                return Err(Error::Parse("vertex count too large".into()));
            }
            let mut vertices = Vec::with_capacity(nv as usize);
            for _ in 0..nv {
                vertices.push([read_f64(r)?, read_f64(r)?, read_f64(r)?]);
            }
            let nf = read_u64(r)?;
            if nf > MAX_LEN {
                return Err(Error::Parse("face count too large".into()));
            }
            let mut faces = Vec::with_capacity(nf as usize);
            for _ in 0..nf {
                let f = [read_u64(r)? as usize, read_u64(r)? as usize, read_u64(r)? as usize];
                if f.iter().any(|&i| i >= nv as usize) {
                    return Err(Error::Parse("face index out of range".into()));
                }
                faces.push(f);
            }
            Some(TriMesh {
                vertices,
                faces,
                uv: None,
                texture: None,
            })
        }
        t => return Err(Error::Parse(format!("bad mesh flag {t}"))),
    };
    let quad_texture = match read_u8(r)? {
        0 => None,
        1 => {
            let w = read_u32(r)? as usize;
            let h = read_u32(r)? as usize;
            if w == 0 || h == 0 || w > 4096 || h > 4096 {
                return Err(Error::Parse("texture dims out of range".into()));
            }
            let data = read_array(r, Some(3 * w * h))?;
            Some(TextureImage {
                width: w,
                height: h,
                data,
            })
        }
        t => return Err(Error::Parse(format!("bad texture flag {t}"))),
    };

    let params = GridParams {
        resolution,
        bounds,
        theta_density,
        theta_color,
    };
    let mut state = ReconState::new(&super::state::FitConfig {
        grid_res: resolution,
        ..Default::default()
    }, bounds);
    state.phase = phase;
    state.step_count = step_count;
    state.params = params;
    state.adam = AdamState {
        density: Moments { m: m_d, v: v_d },
        color: Moments { m: m_c, v: v_c },
        t: adam_t,
    };
    state.mesh = mesh;
    state.quad_texture = quad_texture;
    Ok(state)
}

/// Parses a checkpoint from a byte slice (convenience for loaders and the
/// fuzz harness).
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ReconState> {
    let mut cursor = std::io::Cursor::new(bytes);
    let state = read_checkpoint(&mut cursor)?;
    if (cursor.position() as usize) < bytes.len() {
        return Err(Error::Parse("trailing bytes after checkpoint".into()));
    }
    Ok(state)
}
