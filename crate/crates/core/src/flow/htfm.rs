//! `HTFM` composite flow-map files.
//!
//! Little-endian layout:
//!
//! | offset | size      | field                                  |
//! |--------|-----------|----------------------------------------|
//! | 0      | 4         | magic `HTFM`                           |
//! | 4      | 4         | version (u32) = 1                      |
//! | 8      | 4         | height (u32)                           |
//! | 12     | 4         | width (u32)                            |
//! | 16     | 4         | channels (u32) = 3                     |
//! | 20     | 1         | layout code (u8), 0 = eyes top         |
//! | 21     | H*W*3*8   | f64 payload, (row, column, channel)    |

use std::path::Path;

use super::composite::{CompositeFlowMap, QuadrantLayout, COMPOSITE_CHANNELS};
use crate::error::{Error, Result};

pub const HTFM_MAGIC: &[u8; 4] = b"HTFM";
pub const HTFM_VERSION: u32 = 1;
pub const HTFM_HEADER_LEN: usize = 21;

pub fn encode_flow_map(map: &CompositeFlowMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HTFM_HEADER_LEN + map.data().len() * 8);
    out.extend_from_slice(HTFM_MAGIC);
    out.extend_from_slice(&HTFM_VERSION.to_le_bytes());
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    out.extend_from_slice(&(COMPOSITE_CHANNELS as u32).to_le_bytes());
    out.push(map.layout().code());
    for v in map.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn format_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, field: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| format_err(bytes.len(), format!("truncated header while reading {field}")))
}

pub fn decode_flow_map(bytes: &[u8]) -> Result<CompositeFlowMap> {
    match bytes.get(0..4) {
        Some(m) if m == HTFM_MAGIC => {}
        Some(_) => return Err(format_err(0, "bad magic, expected HTFM")),
        None => return Err(format_err(bytes.len(), "truncated header while reading magic")),
    }
    let version = read_u32(bytes, 4, "version")?;
    if version != HTFM_VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let height = read_u32(bytes, 8, "height")? as usize;
    let width = read_u32(bytes, 12, "width")? as usize;
    let channels = read_u32(bytes, 16, "channels")? as usize;
    if height == 0 || width == 0 || !height.is_multiple_of(2) || !width.is_multiple_of(2) {
        return Err(format_err(8, format!("invalid dimensions {height}x{width}")));
    }
    if channels != COMPOSITE_CHANNELS {
        return Err(format_err(16, format!("expected {COMPOSITE_CHANNELS} channels, found {channels}")));
    }
    let code = *bytes
        .get(20)
        .ok_or_else(|| format_err(bytes.len(), "truncated header while reading layout"))?;
    let layout = QuadrantLayout::from_code(code).ok_or_else(|| format_err(20, format!("unknown layout code {code}")))?;

    let count = height * width * channels;
    let payload = &bytes[HTFM_HEADER_LEN..];
    let expected = count * 8;
    if payload.len() < expected {
        let whole = payload.len() / 8;
        return Err(format_err(
            HTFM_HEADER_LEN + whole * 8,
            format!("truncated payload: {whole} of {count} values present"),
        ));
    }
    if payload.len() > expected {
        return Err(format_err(HTFM_HEADER_LEN + expected, "trailing bytes after payload"));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    CompositeFlowMap::new(height, width, data, layout)
}

pub fn write_flow_file(map: &CompositeFlowMap, path: &Path) -> Result<()> {
    std::fs::write(path, encode_flow_map(map))?;
    Ok(())
}

pub fn read_flow_file(path: &Path) -> Result<CompositeFlowMap> {
    decode_flow_map(&std::fs::read(path)?)
}
