//! File formats and on-disk layouts.
//!
//! All binary containers are little-endian with a 4-byte magic and a u16
//! version. Byte layouts are documented in `docs/formats.md` at the
//! workspace root and covered by round-trip tests here.

pub mod checkpoint;
pub mod embeddings;
pub mod evt1;
pub mod frames;
pub mod instances;
pub mod logs;
pub mod manifest;

use std::io::Read;

use crate::error::{Error, Result};

/// Reads and checks a 4-byte magic plus u16 version.
pub(crate) fn read_header(r: &mut impl Read, magic: &[u8; 4], max_version: u16) -> Result<u16> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v)?;
    let version = u16::from_le_bytes(v);
    if version == 0 || version > max_version {
        return Err(Error::Format(format!(
            "unsupported {} version {version} (newest supported: {max_version})",
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(version)
}

pub(crate) fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f32(r: &mut impl Read) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub(crate) fn read_i8(r: &mut impl Read) -> Result<i8> {
    Ok(read_u8(r)? as i8)
}
