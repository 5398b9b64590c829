//! Image and mesh export: 8-bit PNG, portable float maps, ASCII OBJ.

use super::types::TriMesh;
use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

/// Writes a channel-major float image (`c * H * W`, values clamped to
/// [0,1]) as an 8-bit PNG. 1 channel = grayscale, 3 = RGB, 4 = RGBA.
pub fn write_png(path: &Path, data: &[f64], channels: usize, width: usize, height: usize) -> Result<()> {
    let hw = width * height;
    if data.len() != channels * hw {
        return Err(Error::ShapeMismatch("png buffer size".into()));
    }
    let to8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let buf: Vec<u8> = (0..hw)
        .flat_map(|px| (0..channels).map(move |c| (c, px)))
        .map(|(c, px)| to8(data[c * hw + px]))
        .collect();
    let color = match channels {
        1 => image::ColorType::L8,
        3 => image::ColorType::Rgb8,
        4 => image::ColorType::Rgba8,
        n => {
            return Err(Error::Structural(format!(
                "unsupported png channel count {n}"
            )))
        }
    };
    image::save_buffer(
        path,
        &buf,
        width as u32,
        height as u32,
        color,
    )
    .map_err(|e| Error::Structural(format!("png encode: {e}")))
}

/// Portable float map writer: "Pf" grayscale or "PF" RGB, little-endian
/// (negative scale). PFM stores rows bottom to top.
pub fn write_pfm(path: &Path, data: &[f64], channels: usize, width: usize, height: usize) -> Result<()> {
    let hw = width * height;
    if data.len() != channels * hw || (channels != 1 && channels != 3) {
        return Err(Error::ShapeMismatch("pfm buffer size/channels".into()));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let magic = if channels == 1 { "Pf" } else { "PF" };
    write!(f, "{magic}\n{width} {height}\n-1.0\n")?;
    for row in (0..height).rev() {
        for col in 0..width {
            for c in 0..channels {
                let v = data[c * hw + row * width + col] as f32;
                f.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// ASCII OBJ export with UVs when present.
pub fn write_obj(path: &Path, mesh: &TriMesh) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in &mesh.vertices {
        writeln!(f, "v {} {} {}", v[0], v[1], v[2])?;
    }
    if let Some(uv) = &mesh.uv {
        for t in uv {
            writeln!(f, "vt {} {}", t[0], t[1])?;
        }
        for face in &mesh.faces {
            writeln!(
                f,
                "f {}/{} {}/{} {}/{}",
                face[0] + 1,
                face[0] + 1,
                face[1] + 1,
                face[1] + 1,
                face[2] + 1,
                face[2] + 1
            )?;
        }
    } else {
        for face in &mesh.faces {
            writeln!(f, "f {} {} {}", face[0] + 1, face[1] + 1, face[2] + 1)?;
        }
    }
    Ok(())
}
