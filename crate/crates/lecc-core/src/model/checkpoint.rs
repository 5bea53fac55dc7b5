//! Binary backbone checkpoints.
//!
//! Layout: magic `MBKB`, version u16, config block (layers, dim, heads, ff
//! as u16; vocab u32; max_len u16; seed u64), every parameter as 32-bit
//! floats in declaration order, trailing CRC32. All fields little-endian.
//!
//! The backbone fingerprint is the CRC32 of the complete checkpoint byte
//! string; adapters carry it so incompatible backbones are rejected cheaply.

use super::{Backbone, BackboneConfig};
use crate::bytes::{append_crc, check_crc, put_f32, put_u16, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::nn::Scalar;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MBKB";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn backbone_to_bytes<F: Scalar>(backbone: &Backbone<F>) -> Vec<u8> {
    let cfg = backbone.config();
    let mut buf = Vec::with_capacity(32 + 4 * backbone.param_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u16(&mut buf, CHECKPOINT_VERSION);
    put_u16(&mut buf, cfg.layers as u16);
    put_u16(&mut buf, cfg.dim as u16);
    put_u16(&mut buf, cfg.heads as u16);
    put_u16(&mut buf, cfg.ff as u16);
    put_u32(&mut buf, cfg.vocab as u32);
    put_u16(&mut buf, cfg.max_len as u16);
    put_u64(&mut buf, cfg.seed);
    for p in backbone.params() {
        for &v in p.value.data() {
            put_f32(&mut buf, v.as_f64() as f32);
        }
    }
    append_crc(&mut buf);
    buf
}

pub fn backbone_from_bytes(bytes: &[u8]) -> Result<Backbone<f32>> {
    let body = check_crc(bytes)?;
    let mut r = Reader::new(body);
    r.expect_magic(CHECKPOINT_MAGIC, "backbone checkpoint")?;
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let config = BackboneConfig {
        layers: r.u16()? as usize,
        dim: r.u16()? as usize,
        heads: r.u16()? as usize,
        ff: r.u16()? as usize,
        vocab: r.u32()? as usize,
        max_len: r.u16()? as usize,
        seed: r.u64()?,
    };
    let mut backbone = Backbone::init(config)?;
    for p in backbone.params_mut() {
        for v in p.value.data_mut() {
            *v = r.f32()?;
        }
    }
    if !r.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint parameters",
            r.remaining()
        )));
    }
    Ok(backbone)
}

pub fn save_backbone<F: Scalar>(backbone: &Backbone<F>, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, backbone_to_bytes(backbone))?)
}

pub fn load_backbone(path: &Path) -> Result<Backbone<f32>> {
    backbone_from_bytes(&std::fs::read(path)?)
}

/// The checkpoint's own CRC32, i.e. the checksum over config and weights.
/// Hashing the full file including its trailing CRC would collapse every
/// checkpoint to the fixed CRC-32 residue, so the trailing word is excluded.
pub fn fingerprint<F: Scalar>(backbone: &Backbone<F>) -> u32 {
    let bytes = backbone_to_bytes(backbone);
    crc32fast::hash(&bytes[..bytes.len() - 4])
}
