//! Versioned binary checkpoint format.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "LBCK"
//! 4       4     u32 format version (currently 1)
//! 8       4     u32 kind: 0 = baked transport bundle, 1 = far-field bundle
//! 12      4     u32 spline knots per channel K (0 when not applicable)
//! 16      4     u32 conditioner hidden width
//! 20      4     u32 conditioner hidden layers
//! 24      4     u32 secondary hidden width   (albedo / regression net)
//! 28      4     u32 secondary hidden layers
//! 32      4     u32 position encoding bands
//! 36      4     u32 direction encoding bands
//! 40      4     u32 flags (bit 0: trained on indirect transport only)
//! 44      24    3 x f64 bounding-box half extents (asset-local)
//! 68      4     u32 config echo length C
//! 72      C     UTF-8 config echo (free-form text)
//!         4     u32 slice count
//!   per slice:
//!         4     u32 name length N
//!         N     UTF-8 slice name
//!         8     u64 value count M
//!         4*M   f32 parameter values
//! trailer:
//!         32    SHA-256 over every preceding byte
//! ```

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::math::Vec3;
use crate::nn::ParamStore;

pub const MAGIC: &[u8; 4] = b"LBCK";
pub const FORMAT_VERSION: u32 = 1;

pub const KIND_TRANSPORT: u32 = 0;
pub const KIND_FARFIELD: u32 = 1;

pub const FLAG_INDIRECT_ONLY: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    BadVersion(u32),
    #[error("checkpoint checksum mismatch (file truncated or corrupted)")]
    ChecksumMismatch,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub kind: u32,
    pub k_knots: u32,
    pub cond_hidden: u32,
    pub cond_layers: u32,
    pub secondary_hidden: u32,
    pub secondary_layers: u32,
    pub x_bands: u32,
    pub d_bands: u32,
    pub flags: u32,
    pub half_extents: Vec3,
    pub config_echo: String,
}

pub fn save(path: &Path, header: &CheckpointHeader, store: &ParamStore) -> Result<(), CheckpointError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    for v in [
        FORMAT_VERSION,
        header.kind,
        header.k_knots,
        header.cond_hidden,
        header.cond_layers,
        header.secondary_hidden,
        header.secondary_layers,
        header.x_bands,
        header.d_bands,
        header.flags,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..3 {
        buf.extend_from_slice(&header.half_extents[i].to_le_bytes());
    }
    let echo = header.config_echo.as_bytes();
    buf.extend_from_slice(&(echo.len() as u32).to_le_bytes());
    buf.extend_from_slice(echo);
    let slices: Vec<_> = store.slices().collect();
    buf.extend_from_slice(&(slices.len() as u32).to_le_bytes());
    for (name, offset, len) in slices {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(len as u64).to_le_bytes());
        for &v in &store.values()[offset..offset + len] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.data.len() {
            return Err(CheckpointError::Malformed("unexpected end of file".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load(path: &Path) -> Result<(CheckpointHeader, ParamStore), CheckpointError> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    if data.len() < 32 {
        return Err(CheckpointError::Malformed("file too small".into()));
    }
    let (body, trailer) = data.split_at(data.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(CheckpointError::ChecksumMismatch);
    }
    let mut cur = Cursor { data: body, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let kind = cur.u32()?;
    let k_knots = cur.u32()?;
    let cond_hidden = cur.u32()?;
    let cond_layers = cur.u32()?;
    let secondary_hidden = cur.u32()?;
    let secondary_layers = cur.u32()?;
    let x_bands = cur.u32()?;
    let d_bands = cur.u32()?;
    let flags = cur.u32()?;
    let half_extents = Vec3::new(cur.f64()?, cur.f64()?, cur.f64()?);
    let echo_len = cur.u32()? as usize;
    let config_echo = String::from_utf8(cur.take(echo_len)?.to_vec())
        .map_err(|_| CheckpointError::Malformed("config echo is not UTF-8".into()))?;
    let n_slices = cur.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..n_slices {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("slice name is not UTF-8".into()))?;
        let count = cur.u64()? as usize;
        let offset = store.alloc(&name, count);
        let bytes = cur.take(4 * count)?;
        let values = store.values_mut();
        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
            values[offset + i] = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
    }
    if cur.pos != body.len() {
        return Err(CheckpointError::Malformed("trailing bytes after slices".into()));
    }
    let header = CheckpointHeader {
        kind,
        k_knots,
        cond_hidden,
        cond_layers,
        secondary_hidden,
        secondary_layers,
        x_bands,
        d_bands,
        flags,
        half_extents,
        config_echo,
    };
    Ok((header, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_header() -> CheckpointHeader {
        CheckpointHeader {
            kind: KIND_TRANSPORT,
            k_knots: 16,
            cond_hidden: 64,
            cond_layers: 3,
            secondary_hidden: 64,
            secondary_layers: 2,
            x_bands: 6,
            d_bands: 4,
            flags: FLAG_INDIRECT_ONLY,
            half_extents: Vec3::new(1.2, 1.2, 1.2),
            config_echo: "steps = 100".into(),
        }
    }

    #[test]
    fn roundtrip_preserves_header_and_f32_values() {
        let dir = std::env::temp_dir().join("lightbake_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.ckpt");
        let mut store = ParamStore::new();
        let off = store.alloc("a", 3);
        store.alloc("b", 2);
        store.values_mut()[off] = 0.125; // exactly representable in f32
        store.values_mut()[off + 1] = -7.5;
        store.values_mut()[off + 4] = 2.0;
        let header = sample_header();
        save(&path, &header, &store).unwrap();
        let (h2, s2) = load(&path).unwrap();
        assert_eq!(h2, header);
        assert_eq!(s2.slice("a").unwrap(), &[0.125, -7.5, 0.0]);
        assert_eq!(s2.slice("b").unwrap(), &[0.0, 2.0]);
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let dir = std::env::temp_dir().join("lightbake_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("corrupt.ckpt");
        let mut store = ParamStore::new();
        store.alloc("a", 4);
        save(&path, &sample_header(), &store).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        match load(&path) {
            Err(CheckpointError::ChecksumMismatch) => {}
            other => panic!("expected checksum mismatch, got {other:?}"),
        }
    }
}
