//! `HTCK` parameter checkpoints.
//!
//! Little-endian: magic `HTCK`, version u32, config JSON length u32, config
//! JSON bytes, then for every parameter in layout order: name length u32,
//! name bytes (UTF-8), rank u32, dims u32 x rank, payload f64 x count.

use std::path::Path;

use super::config::ModelConfig;
use super::params::HtNetParams;
use super::HtNet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const HTCK_MAGIC: &[u8; 4] = b"HTCK";
pub const HTCK_VERSION: u32 = 1;

pub fn encode_checkpoint(config: &ModelConfig, params: &HtNetParams) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(config)?;
    let mut out = Vec::with_capacity(16 + json.len() + params.scalar_count() * 8);
    out.extend_from_slice(HTCK_MAGIC);
    out.extend_from_slice(&HTCK_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, t) in params.entries() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let slice = self.bytes.get(self.pos..self.pos + len).ok_or_else(|| Error::Format {
            offset: self.pos as u64,
            reason: format!("truncated while reading {what}"),
        })?;
        self.pos += len;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
}

/// Decodes a checkpoint and checks the tensors against the layout implied
/// by its own config.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelConfig, HtNetParams)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != HTCK_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic, expected HTCK".into(),
        });
    }
    let version = r.u32("version")?;
    if version != HTCK_VERSION as usize {
        return Err(Error::Format {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let json_len = r.u32("config length")?;
    let json_at = r.pos;
    let config: ModelConfig = serde_json::from_slice(r.take(json_len, "config")?).map_err(|e| Error::Format {
        offset: json_at as u64,
        reason: format!("invalid config JSON: {e}"),
    })?;
    let net = HtNet::new(config.clone())?;

    let mut entries = Vec::new();
    while r.pos < bytes.len() {
        let at = r.pos;
        let name_len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format {
                offset: (at + 4) as u64,
                reason: "parameter name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.u32("rank")?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dims")?);
        }
        let count: usize = shape.iter().product();
        let payload_at = r.pos;
        let payload = r.take(count * 8, &format!("payload of `{name}`"))?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| Error::Format {
            offset: payload_at as u64,
            reason: format!("tensor `{name}`: {e}"),
        })?;
        entries.push((name, tensor));
    }
    let params = HtNetParams::from_entries(entries);
    net.check_params(&params).map_err(|e| Error::Format {
        offset: bytes.len() as u64,
        reason: e.to_string(),
    })?;
    Ok((config, params))
}

pub fn write_checkpoint(path: &Path, config: &ModelConfig, params: &HtNetParams) -> Result<()> {
    std::fs::write(path, encode_checkpoint(config, params)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(ModelConfig, HtNetParams)> {
    decode_checkpoint(&std::fs::read(path)?)
}
