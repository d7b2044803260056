//! `PPRJ` projection files and PNG export.
//!
//! `PPRJ` layout (little-endian): magic `PPRJ`, `u32` version, `u32` rows,
//! `u32` cols, `u32` channel count, `u8` kind, one `u8`-length-prefixed ASCII
//! label per channel, `rows·cols·C` `f32` values (row-major, channels
//! interleaved), then `rows·cols` mask bytes (0 or 1).

use super::{Channel, ProjectionImage, ProjectionKind};
use crate::codec::{dim_u32, put_f32, put_u32, Reader};
use crate::{Error, Result};

pub const PPRJ_VERSION: u32 = 1;

pub fn write_pprj(img: &ProjectionImage) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(32 + img.data.len() * 4 + img.mask.len());
    out.extend_from_slice(b"PPRJ");
    put_u32(&mut out, PPRJ_VERSION);
    put_u32(&mut out, dim_u32(img.height, "rows")?);
    put_u32(&mut out, dim_u32(img.width, "cols")?);
    put_u32(&mut out, dim_u32(img.channels.len(), "channels")?);
    out.push(img.kind.code());
    for c in &img.channels {
        let label = c.label().as_bytes();
        out.push(label.len() as u8);
        out.extend_from_slice(label);
    }
    for &v in &img.data {
        put_f32(&mut out, v);
    }
    out.extend(img.mask.iter().map(|&m| m as u8));
    Ok(out)
}

/// Decodes a `PPRJ` blob. The format does not carry a frame id; callers
/// set it from the file name.
pub fn read_pprj(bytes: &[u8]) -> Result<ProjectionImage> {
    let mut r = Reader::new(bytes, "PPRJ");
    r.magic(b"PPRJ")?;
    let version = r.u32()?;
    if version != PPRJ_VERSION {
        return Err(Error::Format(format!("PPRJ: unsupported version {version}")));
    }
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let nc = r.u32()? as usize;
    let kind = ProjectionKind::from_code(r.u8()?)?;
    let mut channels = Vec::with_capacity(nc.min(16));
    for _ in 0..nc {
        let len = r.u8()? as usize;
        let label = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("PPRJ: channel label is not ASCII".into()))?;
        channels.push(label.parse::<Channel>()?);
    }
    let pixels = height
        .checked_mul(width)
        .ok_or_else(|| Error::Format("PPRJ: image size overflow".into()))?;
    let n = pixels
        .checked_mul(nc)
        .ok_or_else(|| Error::Format("PPRJ: image size overflow".into()))?;
    let data = r.f32s(n)?;
    let mask: Vec<bool> = r
        .take(pixels)?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("PPRJ: mask byte {other} is not 0/1"))),
        })
        .collect::<Result<_>>()?;
    r.finish()?;
    if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Validation(format!("PPRJ: value {} at index {i} outside [0, 1]", data[i])));
    }
    Ok(ProjectionImage {
        height,
        width,
        channels,
        kind,
        frame_id: 0,
        data,
        mask,
    })
}

/// 8-bit grayscale PNG of one channel, pixel value `round(255·v)`.
pub fn render_png(img: &ProjectionImage, channel: Channel) -> Result<Vec<u8>> {
    let c = img.channel_index(channel)?;
    let pixels: Vec<u8> = img
        .plane(c)
        .iter()
        .map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8)
        .collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, dim_u32(img.width, "cols")?, dim_u32(img.height, "rows")?);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(format!("PNG: {e}")))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| Error::Format(format!("PNG: {e}")))?;
    }
    Ok(out)
}
