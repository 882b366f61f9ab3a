//! `KDCF` binary tensor files.
//!
//! Layout, all little-endian: magic `KDCF`, version `u16`, height `u32`,
//! width `u32`, channels `u32`, then `height * width * channels` `f32` values
//! in planar order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{KdcError, Result};
use crate::field::DenseField;

pub const MAGIC: &[u8; 4] = b"KDCF";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 * 3;

pub fn encode(field: &DenseField) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + field.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(field.height() as u32).to_le_bytes());
    out.extend_from_slice(&(field.width() as u32).to_le_bytes());
    out.extend_from_slice(&(field.channels() as u32).to_le_bytes());
    for v in field.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<DenseField> {
    if bytes.len() < HEADER_LEN {
        return Err(KdcError::Format("truncated KDCF header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(KdcError::Format("bad KDCF magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(KdcError::Format(format!("unsupported KDCF version {version}")));
    }
    let dim = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(6), dim(10), dim(14));
    let count = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| KdcError::Format("KDCF dimensions overflow".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != count * 4 {
        return Err(KdcError::Format(format!(
            "KDCF body holds {} bytes, expected {}",
            body.len(),
            count * 4
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    DenseField::from_vec(h, w, c, data)
}

pub fn write(path: impl AsRef<Path>, field: &DenseField) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(field))?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<DenseField> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_little_endian() {
        let f = DenseField::from_vec(2, 3, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0, -1.5]).unwrap();
        let bytes = encode(&f);
        assert_eq!(&bytes[..4], b"KDCF");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[2, 0, 0, 0]);
        assert_eq!(&bytes[10..14], &[3, 0, 0, 0]);
        assert_eq!(&bytes[14..18], &[1, 0, 0, 0]);
        assert_eq!(&bytes[18..22], &0.0f32.to_le_bytes());
        assert_eq!(&bytes[22..26], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[38..42], &(-1.5f32).to_le_bytes());
        assert_eq!(bytes.len(), 18 + 24);
    }

    #[test]
    fn rejects_corrupt_input() {
        let f = DenseField::zeros(2, 2, 2);
        let mut bytes = encode(&f);
        assert!(decode(&bytes[..10]).is_err());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
        let mut bytes = encode(&f);
        bytes[4] = 9;
        assert!(decode(&bytes).is_err());
        let mut bytes = encode(&f);
        bytes[18..22].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(h in 1usize..6, w in 1usize..6, c in 1usize..4, seed in proptest::collection::vec(-1e6f32..1e6, 150)) {
            let data: Vec<f32> = seed.into_iter().cycle().take(h * w * c).collect();
            let f = DenseField::from_vec(h, w, c, data).unwrap();
            prop_assert_eq!(decode(&encode(&f)).unwrap(), f);
        }
    }
}
