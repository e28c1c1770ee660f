//! Little-endian binary primitives shared by the on-disk formats.
//!
//! Every format in the toolkit starts with a four-byte magic tag and
//! validates byte counts up front so truncated files fail with the
//! expected-vs-found sizes instead of garbage data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

pub fn write_magic<W: Write>(w: &mut W, magic: &[u8; 4]) -> Result<()> {
    w.write_all(magic)?;
    Ok(())
}

pub fn read_magic<R: Read>(r: &mut R, expect: &[u8; 4], what: &str) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got).map_err(|_| {
        Error::format(format!("{what}: file shorter than its 4-byte magic"))
    })?;
    if &got != expect {
        return Err(Error::format(format!(
            "{what}: bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(expect)
        )));
    }
    Ok(())
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(format!("{what}: truncated u32 field")))?;
    Ok(u32::from_le_bytes(buf))
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_f64<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(format!("{what}: truncated f64 field")))?;
    Ok(f64::from_le_bytes(buf))
}

pub fn write_f32_slice<W: Write>(w: &mut W, xs: &[f32]) -> Result<()> {
    for &x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Reads exactly `n` f32 values, reporting expected vs found byte counts
/// when the payload is short.
pub fn read_f32_vec<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    let mut filled = 0;
    while filled < bytes.len() {
        let k = r.read(&mut bytes[filled..])?;
        if k == 0 {
            return Err(Error::format(format!(
                "{what}: truncated payload, expected {} bytes, found {}",
                bytes.len(),
                filled
            )));
        }
        filled += k;
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_f64_slice<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for &x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_f64_vec<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    let mut filled = 0;
    while filled < bytes.len() {
        let k = r.read(&mut bytes[filled..])?;
        if k == 0 {
            return Err(Error::format(format!(
                "{what}: truncated payload, expected {} bytes, found {}",
                bytes.len(),
                filled
            )));
        }
        filled += k;
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
        .collect())
}

pub fn open_reader(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

pub fn open_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// FNV-1a over a byte stream; used to fingerprint checkpoints in map
/// headers and to derive per-worker seeds from string keys.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
