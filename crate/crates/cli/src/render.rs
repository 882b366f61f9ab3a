//! Binary PGM output for fields and instance label maps.

use std::fs;
use std::path::Path;

use kdc_core::field::DenseField;

use crate::error::CliResult;

/// Grey level for instance label `k` (1-based); background is 0.
pub fn palette(k: usize) -> u8 {
    if k == 0 {
        0
    } else {
        (48 + ((k - 1) * 71) % 208) as u8
    }
}

pub fn pgm_bytes(height: usize, width: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write_pgm(path: &Path, height: usize, width: usize, pixels: &[u8]) -> CliResult<()> {
    fs::write(path, pgm_bytes(height, width, pixels))?;
    Ok(())
}

/// One channel scaled so its maximum maps to 255; non-positive values map to 0.
pub fn channel_to_gray(field: &DenseField, c: usize) -> Vec<u8> {
    let plane = field.channel(c);
    let max = plane.iter().copied().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return vec![0; plane.len()];
    }
    plane
        .iter()
        .map(|&v| (v.max(0.0) / max * 255.0).round() as u8)
        .collect()
}

/// Paints label `k + 1` for every pixel owned by instance `k`.
pub fn labels_to_gray(labels: &[Option<usize>]) -> Vec<u8> {
    labels.iter().map(|l| l.map_or(0, |k| palette(k + 1))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_is_distinct_for_small_counts() {
        let levels: Vec<u8> = (0..=32).map(palette).collect();
        for i in 0..levels.len() {
            for j in 0..i {
                assert_ne!(levels[i], levels[j]);
            }
        }
    }

    #[test]
    fn zero_field_is_black_and_max_is_white() {
        let z = DenseField::zeros(3, 4, 1);
        assert!(channel_to_gray(&z, 0).iter().all(|&v| v == 0));
        let mut f = DenseField::zeros(3, 4, 2);
        f.set(1, 2, 1, 0.5);
        f.set(1, 0, 0, 0.25);
        let g = channel_to_gray(&f, 1);
        assert_eq!(g[4 + 2], 255);
        assert_eq!(g[0], 128);
        assert_eq!(&pgm_bytes(1, 2, &[1, 2])[..], b"P5\n2 1\n255\n\x01\x02");
    }
}
