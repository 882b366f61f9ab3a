//! COCO uncompressed run-length encoding.
//!
//! Runs are taken over the column-major (Fortran order) pixel sequence and
//! alternate background/foreground, starting with background.

use serde::{Deserialize, Serialize};

use crate::error::{KdcError, Result};
use crate::field::BinaryMask;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    /// `[height, width]`
    pub size: [usize; 2],
    pub counts: Vec<u32>,
}

impl Rle {
    pub fn encode(mask: &BinaryMask) -> Rle {
        let (h, w) = (mask.height(), mask.width());
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for x in 0..w {
            for y in 0..h {
                let v = mask.get(x, y);
                if v != current {
                    counts.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
            }
        }
        counts.push(run);
        Rle {
            size: [h, w],
            counts,
        }
    }

    pub fn decode(&self) -> Result<BinaryMask> {
        let [h, w] = self.size;
        let total: u64 = self.counts.iter().map(|&c| c as u64).sum();
        if total != (h * w) as u64 {
            return Err(KdcError::Format(format!(
                "RLE counts cover {total} pixels, expected {}",
                h * w
            )));
        }
        let mut mask = BinaryMask::new(h, w);
        let mut idx = 0usize;
        let mut value = false;
        for &c in &self.counts {
            if value {
                for i in idx..idx + c as usize {
                    mask.set(i / h, i % h, true);
                }
            }
            idx += c as usize;
            value = !value;
        }
        Ok(mask)
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn column_major_runs() {
        // 2x3 mask, foreground in the middle column.
        let mut m = BinaryMask::new(2, 3);
        m.set(1, 0, true);
        m.set(1, 1, true);
        let r = Rle::encode(&m);
        assert_eq!(r.size, [2, 3]);
        assert_eq!(r.counts, vec![2, 2, 2]);
        assert_eq!(r.area(), 2);
    }

    #[test]
    fn leading_foreground_has_zero_run() {
        let m = BinaryMask::filled(2, 2, true);
        assert_eq!(Rle::encode(&m).counts, vec![0, 4]);
        let empty = BinaryMask::new(2, 2);
        assert_eq!(Rle::encode(&empty).counts, vec![4]);
    }

    #[test]
    fn rejects_inconsistent_counts() {
        let r = Rle {
            size: [2, 2],
            counts: vec![1, 1],
        };
        assert!(r.decode().is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(h in 1usize..9, w in 1usize..9, bits in proptest::collection::vec(any::<bool>(), 64)) {
            let data: Vec<bool> = bits.into_iter().take(h * w).collect();
            let m = BinaryMask::from_vec(h, w, data).unwrap();
            let r = Rle::encode(&m);
            prop_assert_eq!(r.area() as usize, m.area());
            prop_assert_eq!(r.decode().unwrap(), m);
        }
    }
}
