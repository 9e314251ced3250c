//! Middlebury `.flo`: f32 magic 202021.25 ("PIEH" in little-endian bytes),
//! i32 width, i32 height, then row-major interleaved (u, v) f32 pairs.
//! Every field is little-endian.

use std::path::Path;

use super::FlowField;
use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;

const HEADER_LEN: usize = 12;

/// Sanity bound on either dimension; real flow files are far smaller.
const MAX_DIM: i32 = 1 << 16;

pub fn encode_flo(flow: &FlowField) -> Result<Vec<u8>> {
    if !flow.is_finite() {
        return Err(Error::input("refusing to write a non-finite flow field"));
    }
    let n = flow.width() * flow.height();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for (u, v) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    let word = |offset: usize| -> Result<[u8; 4]> {
        bytes
            .get(offset..offset + 4)
            .map(|b| b.try_into().expect("4-byte slice"))
            .ok_or_else(|| {
                Error::format(
                    bytes.len() as u64,
                    format!("file ends inside the 4-byte field at byte {offset}"),
                )
            })
    };
    let magic = f32::from_le_bytes(word(0)?);
    if magic != FLO_MAGIC {
        return Err(Error::format(0, format!("bad magic {magic}, expected {FLO_MAGIC}")));
    }
    let width = i32::from_le_bytes(word(4)?);
    let height = i32::from_le_bytes(word(8)?);
    for (offset, name, v) in [(4u64, "width", width), (8, "height", height)] {
        if !(0..=MAX_DIM).contains(&v) {
            return Err(Error::format(offset, format!("implausible {name} {v}")));
        }
    }
    let (w, h) = (width as usize, height as usize);
    let expected = HEADER_LEN + 8 * w * h;
    if bytes.len() < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated: {w}×{h} flow needs {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(
            expected as u64,
            format!("{} trailing bytes after the flow data", bytes.len() - expected),
        ));
    }
    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    for pair in bytes[HEADER_LEN..].chunks_exact(8) {
        u.push(f32::from_le_bytes(pair[..4].try_into().expect("4 bytes")));
        v.push(f32::from_le_bytes(pair[4..].try_into().expect("4 bytes")));
    }
    FlowField::new(w, h, u, v)
}

pub fn write_flo(flow: &FlowField, path: &Path) -> Result<()> {
    let bytes = encode_flo(flow)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flo(&bytes)
}
