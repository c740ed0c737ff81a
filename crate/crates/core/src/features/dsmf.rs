//! `DSMF` precomputed-feature files.
//!
//! Layout (little-endian): magic `DSMF`, version byte, `u32` h, w, d, flag
//! byte (0 raw, 1 normalized), then `h*w*d` `f32` values, row-major with the
//! channel index fastest.

use std::path::Path;

use crate::correlation::FeatureMap;
use crate::error::{Error, FormatError, Result};

pub const MAGIC: &[u8; 4] = b"DSMF";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 12 + 1;
/// Upper bound on `h*w*d`, to reject corrupt headers before allocating.
pub const MAX_VALUES: u64 = 1 << 28;

pub fn encode(h: u32, w: u32, d: u32, normalized: bool, values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for v in [h, w, d] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(u8::from(normalized));
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_map(fm: &FeatureMap) -> Vec<u8> {
    encode(fm.h() as u32, fm.w() as u32, fm.d() as u32, true, fm.values())
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode(bytes: &[u8]) -> std::result::Result<FeatureMap, FormatError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic {
            expected: "DSMF".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            offset: bytes.len() as u64,
            needed: HEADER_LEN as u64,
            available: bytes.len() as u64,
        });
    }
    if bytes[4] != VERSION {
        return Err(FormatError::Version {
            version: bytes[4],
            offset: 4,
        });
    }
    let (h, w, d) = (u32_at(bytes, 5), u32_at(bytes, 9), u32_at(bytes, 13));
    let flag = bytes[17];
    if flag > 1 {
        return Err(FormatError::Invalid {
            offset: 17,
            detail: format!("normalization flag {flag}"),
        });
    }
    if h == 0 || w == 0 || d == 0 {
        return Err(FormatError::Invalid {
            offset: 5,
            detail: format!("empty extents {h}x{w}x{d}"),
        });
    }
    let count = u128::from(h) * u128::from(w) * u128::from(d);
    if count > u128::from(MAX_VALUES) {
        return Err(FormatError::ExtentOverflow {
            offset: 5,
            detail: format!("{h}x{w}x{d} exceeds {MAX_VALUES} values"),
        });
    }
    let count = count as u64;
    let needed = HEADER_LEN as u64 + 4 * count;
    let available = bytes.len() as u64;
    if available < needed {
        // offset of the first missing float
        let whole = (available - HEADER_LEN as u64) / 4;
        return Err(FormatError::Truncated {
            offset: HEADER_LEN as u64 + 4 * whole,
            needed,
            available,
        });
    }
    if available > needed {
        return Err(FormatError::Invalid {
            offset: needed,
            detail: format!("{} trailing bytes", available - needed),
        });
    }
    let values: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::Invalid {
            offset: (HEADER_LEN + 4 * k) as u64,
            detail: "non-finite feature value".into(),
        });
    }
    let (h, w, d) = (h as usize, w as usize, d as usize);
    let fm = if flag == 1 {
        FeatureMap::from_normalized(h, w, d, values)
    } else {
        FeatureMap::new(h, w, d, values)
    };
    fm.map_err(|e| FormatError::Invalid {
        offset: 5,
        detail: e.to_string(),
    })
}

pub fn save_features(fm: &FeatureMap, path: &Path) -> Result<()> {
    std::fs::write(path, encode_map(fm)).map_err(|e| Error::io(path, e))
}

pub fn load_features(path: &Path) -> Result<FeatureMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrong_magic() {
        let mut b = encode(1, 1, 1, true, &[1.0]);
        b[0] = b'X';
        assert!(matches!(decode(&b), Err(FormatError::BadMagic { .. })));
    }

    #[test]
    fn truncation_offset() {
        // 2x2x3 declares 12 floats; only 10 are present
        let b = encode(2, 2, 3, false, &[0.5; 10]);
        assert_eq!(
            decode(&b),
            Err(FormatError::Truncated {
                offset: 18 + 40,
                needed: 18 + 48,
                available: 18 + 40,
            })
        );
    }

    #[test]
    fn extent_overflow() {
        let b = encode(u32::MAX, u32::MAX, 8, true, &[]);
        assert!(matches!(decode(&b), Err(FormatError::ExtentOverflow { offset: 5, .. })));
    }

    #[test]
    fn raw_values_are_normalized() {
        let b = encode(1, 2, 2, false, &[3.0, 4.0, 0.0, 0.0]);
        let fm = decode(&b).unwrap();
        assert_eq!(fm.values(), &[0.6, 0.8, 0.0, 0.0]);
    }
}
