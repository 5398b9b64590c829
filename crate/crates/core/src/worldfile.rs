//! World serialization: the `world-v1` JSON schema.
//!
//! Grids and textures are embedded as base64-encoded little-endian f32
//! arrays. Loading validates all world invariants before construction.

use crate::error::{Error, Result};
use crate::render::camera::Camera;
use crate::render::types::{Aabb, TextureImage, VolumeGrid};
use crate::world::{ProtoObject, Prototype, TexturedQuad, WorldModel};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

pub const WORLD_SCHEMA: &str = "world-v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldFile {
    schema: String,
    view_noise: f64,
    cameras: Vec<Camera>,
    prototypes: Vec<PrototypeFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrototypeFile {
    id: usize,
    prior: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    object: ObjectFile,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ObjectFile {
    Grid {
        resolution: usize,
        bounds_min: [f64; 3],
        bounds_max: [f64; 3],
        density_b64: String,
        color_b64: String,
    },
    Quad {
        center: [f64; 3],
        u_axis: [f64; 3],
        v_axis: [f64; 3],
        texture_size: [usize; 2],
        texture_b64: String,
    },
}

fn encode_f32(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_f32(s: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::Parse(format!("{what}: bad base64: {e}")))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Parse(format!(
            "{what}: expected {} bytes, got {}",
            expected * 4,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Serializes a world to `world-v1` JSON.
pub fn to_json(world: &WorldModel) -> Result<String> {
    let prototypes = world
        .prototypes
        .iter()
        .map(|p| {
            let object = match &p.object {
                ProtoObject::Grid(g) => ObjectFile::Grid {
                    resolution: g.resolution,
                    bounds_min: g.bounds.min,
                    bounds_max: g.bounds.max,
                    density_b64: encode_f32(&g.density),
                    color_b64: encode_f32(&g.color),
                },
                ProtoObject::Quad(q) => ObjectFile::Quad {
                    center: q.center,
                    u_axis: q.u_axis,
                    v_axis: q.v_axis,
                    texture_size: [q.texture.width, q.texture.height],
                    texture_b64: encode_f32(&q.texture.data),
                },
            };
            PrototypeFile {
                id: p.id,
                prior: p.prior,
                label: p.label.clone(),
                object,
            }
        })
        .collect();
    let file = WorldFile {
        schema: WORLD_SCHEMA.to_string(),
        view_noise: world.view_noise,
        cameras: world.cameras.clone(),
        prototypes,
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Parse(e.to_string()))
}

/// Parses `world-v1` JSON into a world model, re-rendering prototype caches.
pub fn from_json(text: &str) -> Result<WorldModel> {
    let file: WorldFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("world json: {e}")))?;
    if file.schema != WORLD_SCHEMA {
        return Err(Error::Parse(format!(
            "unsupported world schema {:?} (expected {WORLD_SCHEMA:?})",
            file.schema
        )));
    }
    let mut prototypes = Vec::with_capacity(file.prototypes.len());
    for p in file.prototypes {
        let object = match p.object {
            ObjectFile::Grid {
                resolution,
                bounds_min,
                bounds_max,
                density_b64,
                color_b64,
            } => {
                if resolution < 2 || resolution > 512 {
                    return Err(Error::Parse(format!(
                        "grid resolution {resolution} out of range"
                    )));
                }
                let n3 = resolution * resolution * resolution;
                let mut g = VolumeGrid::new(
                    resolution,
                    Aabb {
                        min: bounds_min,
                        max: bounds_max,
                    },
                )?;
                g.density = decode_f32(&density_b64, n3, "density")?;
                g.color = decode_f32(&color_b64, 3 * n3, "color")?;
                for c in g.color.iter_mut() {
                    *c = c.clamp(0.0, 1.0);
                }
                g.validate()?;
                ProtoObject::Grid(g)
            }
            ObjectFile::Quad {
                center,
                u_axis,
                v_axis,
                texture_size,
                texture_b64,
            } => {
                let [w, h] = texture_size;
                if w == 0 || h == 0 || w > 4096 || h > 4096 {
                    return Err(Error::Parse(format!("texture size {w}x{h} out of range")));
                }
                let data = decode_f32(&texture_b64, 3 * w * h, "texture")?;
                ProtoObject::Quad(TexturedQuad {
                    center,
                    u_axis,
                    v_axis,
                    texture: TextureImage {
                        width: w,
                        height: h,
                        data,
                    },
                })
            }
        };
        prototypes.push(Prototype {
            id: p.id,
            object,
            prior: p.prior,
            label: p.label,
        });
    }
    WorldModel::new(prototypes, file.cameras, file.view_noise)
}
