//! LTF latent tensor files.
//!
//! Layout (little-endian):
//!
//! | field   | type    |
//! |---------|---------|
//! | magic   | `LTF1`  |
//! | dtype   | u8 (0 = i32, 1 = f32) |
//! | C, H_y, W_y | u32 each |
//! | y_min, y_max | i32 each |
//! | s       | u32     |
//! | payload | `C*H_y*W_y` values, row-major |
//!
//! f32 payloads are rounded and clamped on ingestion.

use crate::error::{corrupt, Result};
use crate::support::{clamp_to_support, HistogramSpec, LatentTensor};
use crate::wire::{Reader, Writer};

pub const LTF_MAGIC: &[u8; 4] = b"LTF1";
pub const LTF_HEADER_LEN: usize = 29;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    I32 = 0,
    F32 = 1,
}

/// A decoded LTF file.
#[derive(Debug, Clone)]
pub struct LtfFile {
    pub latent: LatentTensor,
    pub dtype: Dtype,
    /// Out-of-support values clamped during ingestion (always 0 for i32 files
    /// that were written by this crate).
    pub clamps: usize,
}

pub fn write_ltf(latent: &LatentTensor) -> Vec<u8> {
    let mut w = header(latent, Dtype::I32);
    for &v in latent.data() {
        w.i32(v);
    }
    w.finish()
}

/// Writes real-valued data; used for raw (pre-quantization) latents.
pub fn write_ltf_f32(
    data: &[f32],
    channels: usize,
    height: usize,
    width: usize,
    downscale: u32,
    spec: HistogramSpec,
) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(LTF_MAGIC);
    w.u8(Dtype::F32 as u8);
    w.u32(channels as u32);
    w.u32(height as u32);
    w.u32(width as u32);
    w.i32(spec.y_min());
    w.i32(spec.y_max());
    w.u32(downscale);
    for &v in data {
        w.f32(v);
    }
    w.finish()
}

fn header(latent: &LatentTensor, dtype: Dtype) -> Writer {
    let spec = latent.spec();
    let mut w = Writer::new();
    w.bytes(LTF_MAGIC);
    w.u8(dtype as u8);
    w.u32(latent.channels() as u32);
    w.u32(latent.height() as u32);
    w.u32(latent.width() as u32);
    w.i32(spec.y_min());
    w.i32(spec.y_max());
    w.u32(latent.downscale());
    w
}

pub fn read_ltf(bytes: &[u8]) -> Result<LtfFile> {
    let mut r = Reader::new(bytes);
    r.expect_magic(LTF_MAGIC)?;
    let dtype = match r.u8()? {
        0 => Dtype::I32,
        1 => Dtype::F32,
        t => return Err(corrupt(format!("unknown LTF dtype {t}"))),
    };
    let channels = r.u32()? as usize;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let spec = HistogramSpec::new(r.i32()?, r.i32()?).map_err(|e| corrupt(e.to_string()))?;
    let downscale = r.u32()?;
    let count = channels
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| corrupt("LTF shape overflows"))?;
    let file = match dtype {
        Dtype::I32 => {
            let mut raw = Vec::with_capacity(count);
            for _ in 0..count {
                raw.push(r.i32()? as f64);
            }
            let c = clamp_to_support(&raw, channels, height, width, downscale, spec)?;
            LtfFile { latent: c.latent, dtype, clamps: c.clamps }
        }
        Dtype::F32 => {
            let mut raw = Vec::with_capacity(count);
            for _ in 0..count {
                raw.push(r.f32()? as f64);
            }
            let c = clamp_to_support(&raw, channels, height, width, downscale, spec)?;
            LtfFile { latent: c.latent, dtype, clamps: c.clamps }
        }
    };
    r.finish()?;
    Ok(file)
}
