//! Binary volume files: `MMGS`, u16 version, u16 channels, u32 D/H/W, then
//! little-endian f32 voxels channel-major.

use std::io::{Read, Write};
use std::path::Path;

use mmsurv_core::volume::CHANNELS;
use mmsurv_core::Volume;

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 4] = b"MMGS";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 3 * 4;

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let [d, h, w] = v.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * v.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(CHANNELS as u16).to_le_bytes());
    for dim in [d, h, w] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    let fail = |m: String| HarnessError::Format(m);
    if bytes.len() < HEADER_LEN {
        return Err(fail(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[..4])));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize;
    let version = u16_at(4);
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let channels = u16_at(6) as usize;
    if channels != CHANNELS {
        return Err(fail(format!("{channels} channels, expected {CHANNELS}")));
    }
    let dims = [u32_at(8), u32_at(12), u32_at(16)];
    if dims.contains(&0) {
        return Err(fail(format!("zero dimension in {dims:?}")));
    }
    let count = dims
        .iter()
        .try_fold(channels, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| fail(format!("dims {dims:?} overflow")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * count {
        return Err(fail(format!("payload has {} bytes, dims {dims:?} need {}", payload.len(), 4 * count)));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Volume::new(dims, data)?)
}

pub fn write_volume<W: Write>(v: &Volume, mut w: W) -> Result<()> {
    w.write_all(&encode_volume(v))?;
    Ok(())
}

pub fn read_volume<R: Read>(mut r: R) -> Result<Volume> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_volume(&bytes)
}

pub fn save_volume(v: &Volume, path: &Path) -> Result<()> {
    std::fs::write(path, encode_volume(v))?;
    Ok(())
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    decode_volume(&std::fs::read(path)?)
}
