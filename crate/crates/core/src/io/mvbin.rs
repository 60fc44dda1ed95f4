//! MVBIN, the binary point format.
//!
//! ```text
//! offset  size       field
//! 0       8          magic "MVBIN\0\0" followed by version byte 0x01
//! 8       8          numItems, u64 little-endian
//! 16      8          numDims, u64 little-endian
//! 24      4·N·D      values, f32 little-endian, row-major
//! ..      Σ(4 + len) numDims names, each a u32 LE byte length and UTF-8 bytes
//! ```
//!
//! A file is valid only if its length is exactly
//! `24 + 4·N·D + Σ(4 + len(name))`.

use std::path::Path;

use crate::error::{CoreError, Result};
use crate::payload::PointPayload;

pub const MAGIC: [u8; 8] = *b"MVBIN\0\0\x01";
pub const HEADER_LEN: usize = 24;

/// Exact encoded size of a payload.
pub fn encoded_len(num_items: usize, num_dims: usize, dim_names: &[String]) -> usize {
    HEADER_LEN + 4 * num_items * num_dims + dim_names.iter().map(|n| 4 + n.len()).sum::<usize>()
}

pub fn encode(payload: &PointPayload) -> Vec<u8> {
    let (n, d) = (payload.num_items(), payload.num_dims());
    let mut out = Vec::with_capacity(encoded_len(n, d, payload.dim_names()));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    for v in payload.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for name in payload.dim_names() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<PointPayload> {
    if bytes.len() < HEADER_LEN {
        return Err(CoreError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[..7] != MAGIC[..7] {
        return Err(CoreError::Format("not an MVBIN file (bad magic)".into()));
    }
    if bytes[7] != MAGIC[7] {
        return Err(CoreError::Unsupported(format!("MVBIN version {}", bytes[7])));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let (n, d) = (word(8), word(16));
    let too_big = || CoreError::Format(format!("implausible MVBIN extents {n}x{d}"));
    let count = usize::try_from(n.checked_mul(d).ok_or_else(too_big)?).map_err(|_| too_big())?;
    let values_end = count
        .checked_mul(4)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(too_big)?;
    // every name takes at least four bytes
    let min_len = (d as usize)
        .checked_mul(4)
        .and_then(|b| b.checked_add(values_end))
        .ok_or_else(too_big)?;
    if bytes.len() < min_len {
        return Err(CoreError::Truncated {
            expected: min_len,
            found: bytes.len(),
        });
    }
    let values: Vec<f32> = bytes[HEADER_LEN..values_end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let mut at = values_end;
    let mut names = Vec::with_capacity(d as usize);
    for _ in 0..d {
        if bytes.len() < at + 4 {
            return Err(CoreError::Truncated {
                expected: at + 4,
                found: bytes.len(),
            });
        }
        let len = u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
        at += 4;
        if bytes.len() < at + len {
            return Err(CoreError::Truncated {
                expected: at + len,
                found: bytes.len(),
            });
        }
        let name = std::str::from_utf8(&bytes[at..at + len])
            .map_err(|_| CoreError::Format("dimension name is not UTF-8".into()))?;
        names.push(name.to_string());
        at += len;
    }
    if at != bytes.len() {
        return Err(CoreError::Format(format!(
            "{} trailing bytes after MVBIN payload",
            bytes.len() - at
        )));
    }
    PointPayload::new(values, n as usize, d as usize, names)
}

pub fn write_file(path: &Path, payload: &PointPayload) -> Result<()> {
    std::fs::write(path, encode(payload))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<PointPayload> {
    decode(&std::fs::read(path)?)
}
