//! Training losses with analytic gradients.
//!
//! Reductions run in row-major order over planar channels so reported values
//! are bitwise reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encode::{KeyCentroidField, OffsetField};
use crate::error::{invalid, shape_mismatch, KdcError, Result};
use crate::field::{BinaryMask, DenseField};

/// Probability clamp for the cross-entropy logarithms.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    /// Derivative of `value` with respect to each prediction element.
    pub gradient: DenseField,
    pub num_active: usize,
}

/// Mean binary cross-entropy over pixels where `active` is set (all channels).
pub fn heatmap_bce(pred: &DenseField, target: &DenseField, active: &BinaryMask) -> Result<LossReport> {
    if !pred.same_shape(target) {
        return Err(shape_mismatch(pred.shape_string(), target.shape_string()));
    }
    check_plane(pred, active)?;
    let n = active.area() * pred.channels();
    if n == 0 {
        return Err(KdcError::Empty("no active pixels for heatmap loss".into()));
    }
    let inv_n = 1.0 / n as f64;
    let plane = pred.plane_len();
    let mut grad = vec![0.0f32; pred.data().len()];
    let mut sum = 0.0f64;
    for (i, (&p, &y)) in pred.data().iter().zip(target.data()).enumerate() {
        if !active.data()[i % plane] {
            continue;
        }
        let p = (p as f64).clamp(BCE_EPS, 1.0 - BCE_EPS);
        let y = y as f64;
        sum -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad[i] = ((p - y) / (p * (1.0 - p)) * inv_n) as f32;
    }
    Ok(LossReport {
        value: sum * inv_n,
        gradient: DenseField::from_vec(pred.height(), pred.width(), pred.channels(), grad)?,
        num_active: n,
    })
}

/// Mean L1 displacement error over valid disk pixels of every joint.
///
/// `pred` carries `2 * joints` channels laid out like [`KeyCentroidField::base`].
pub fn keycentroid_l1(pred: &DenseField, target: &KeyCentroidField) -> Result<LossReport> {
    if !pred.same_shape(&target.base) {
        return Err(shape_mismatch(target.base.shape_string(), pred.shape_string()));
    }
    let n = target.valid_count();
    if n == 0 {
        return Err(KdcError::Empty("no valid KeyCentroid pixels".into()));
    }
    let masks: Vec<&BinaryMask> = target.valid.iter().flat_map(|m| [m, m]).collect();
    Ok(masked_l1(pred, &target.base, &masks, n))
}

/// Mean L1 offset error over foreground pixels of `target`.
pub fn offset_l1(pred: &OffsetField, target: &OffsetField) -> Result<LossReport> {
    if !pred.field.same_shape(&target.field) {
        return Err(shape_mismatch(target.field.shape_string(), pred.field.shape_string()));
    }
    let n = target.foreground.area();
    if n == 0 {
        return Err(KdcError::Empty("no foreground pixels for offset loss".into()));
    }
    let fg = &target.foreground;
    Ok(masked_l1(&pred.field, &target.field, &[fg, fg], n))
}

fn masked_l1(pred: &DenseField, target: &DenseField, masks: &[&BinaryMask], n: usize) -> LossReport {
    let inv_n = 1.0 / n as f64;
    let plane = pred.plane_len();
    let mut grad = vec![0.0f32; pred.data().len()];
    let mut sum = 0.0f64;
    for c in 0..pred.channels() {
        let mask = masks[c].data();
        let p = pred.channel(c);
        let t = target.channel(c);
        for i in 0..plane {
            if !mask[i] {
                continue;
            }
            let d = p[i] as f64 - t[i] as f64;
            sum += d.abs();
            // Subgradient zero at the kink.
            grad[c * plane + i] = (if d > 0.0 {
                inv_n
            } else if d < 0.0 {
                -inv_n
            } else {
                0.0
            }) as f32;
        }
    }
    LossReport {
        value: sum * inv_n,
        gradient: DenseField::from_vec(pred.height(), pred.width(), pred.channels(), grad)
            .expect("gradient shape"),
        num_active: n,
    }
}

fn check_plane(field: &DenseField, mask: &BinaryMask) -> Result<()> {
    if field.height() != mask.height() || field.width() != mask.width() {
        return Err(shape_mismatch(
            format!("{}x{}", field.height(), field.width()),
            format!("{}x{}", mask.height(), mask.width()),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// Largest `|numeric - analytic| / max(|numeric|, |analytic|)` over sampled coordinates.
    pub max_rel_error: f64,
    pub sampled: usize,
    /// Coordinates rejected because the loss has a kink there.
    pub skipped_kinks: usize,
}

/// Compares analytic gradients against central differences on sampled coordinates.
///
/// Half of the samples are drawn from coordinates with a nonzero analytic
/// gradient, the rest uniformly. Coordinates whose one-sided slopes disagree
/// (L1 kinks) are skipped.
pub fn finite_diff_check<F>(loss: F, pred: &DenseField, eps: f64, samples: usize, seed: u64) -> Result<GradientCheck>
where
    F: Fn(&DenseField) -> Result<LossReport>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(invalid(format!("eps must lie in [1e-6, 1e-3], got {eps}")));
    }
    let base = loss(pred)?;
    let len = pred.data().len();
    if len == 0 {
        return Err(KdcError::Empty("empty prediction".into()));
    }
    let active: Vec<usize> = (0..len).filter(|&i| base.gradient.data()[i] != 0.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = pred.clone().into_data();
    let eval = |data: &[f32]| -> Result<f64> {
        let f = DenseField::from_vec(pred.height(), pred.width(), pred.channels(), data.to_vec())?;
        Ok(loss(&f)?.value)
    };

    let mut check = GradientCheck {
        max_rel_error: 0.0,
        sampled: 0,
        skipped_kinks: 0,
    };
    let max_attempts = samples * 20;
    let mut attempts = 0;
    while check.sampled < samples && attempts < max_attempts {
        attempts += 1;
        let i = if attempts % 2 == 1 && !active.is_empty() {
            active[rng.random_range(0..active.len())]
        } else {
            rng.random_range(0..len)
        };
        let x = work[i];
        let up = (x as f64 + eps) as f32;
        let down = (x as f64 - eps) as f32;
        work[i] = up;
        let l_up = eval(&work)?;
        work[i] = down;
        let l_down = eval(&work)?;
        work[i] = x;
        let (h_up, h_down) = (up as f64 - x as f64, x as f64 - down as f64);
        let slope_up = (l_up - base.value) / h_up;
        let slope_down = (base.value - l_down) / h_down;
        let scale = slope_up.abs().max(slope_down.abs());
        if scale > 0.0 && (slope_up - slope_down).abs() > 0.5 * scale {
            check.skipped_kinks += 1;
            continue;
        }
        let numeric = (l_up - l_down) / (up as f64 - down as f64);
        let analytic = base.gradient.data()[i] as f64;
        let denom = numeric.abs().max(analytic.abs());
        let rel = if denom == 0.0 { 0.0 } else { (numeric - analytic).abs() / denom };
        check.max_rel_error = check.max_rel_error.max(rel);
        check.sampled += 1;
    }
    Ok(check)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::SubPixel;
    use crate::encode::{encode_keycentroid, encode_offsets, CentroidMode};
    use crate::scene::generate_scene;
    use proptest::prelude::{prop_assert, proptest};

    fn random_field(h: usize, w: usize, c: usize, lo: f32, hi: f32, seed: u64) -> DenseField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * c).map(|_| rng.random_range(lo..hi)).collect();
        DenseField::from_vec(h, w, c, data).unwrap()
    }

    fn random_binary(h: usize, w: usize, c: usize, seed: u64) -> DenseField {
        random_field(h, w, c, 0.0, 1.0, seed).map(|v| if v > 0.5 { 1.0 } else { 0.0 })
    }

    #[test]
    fn bce_examples() {
        let all = BinaryMask::filled(4, 4, true);
        let y = random_binary(4, 4, 2, 1);
        let r = heatmap_bce(&y, &y, &all).unwrap();
        assert!(r.value <= 1e-6);

        let half = DenseField::constant(4, 4, 2, 0.5);
        let r = heatmap_bce(&half, &y, &all).unwrap();
        assert!((r.value - std::f64::consts::LN_2).abs() < 1e-9);
        assert!((r.value - std::f64::consts::LN_2).abs() < 1e-6);

        let one = DenseField::constant(1, 1, 1, 1.0);
        let p = DenseField::constant(1, 1, 1, 0.25);
        let r = heatmap_bce(&p, &one, &BinaryMask::filled(1, 1, true)).unwrap();
        assert!((r.value - (-(0.25f64).ln())).abs() < 1e-9);
        assert!((r.value - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn bce_errors() {
        let p = DenseField::constant(2, 2, 1, 0.5);
        let t = DenseField::constant(2, 3, 1, 0.0);
        assert!(heatmap_bce(&p, &t, &BinaryMask::filled(2, 2, true)).is_err());
        assert!(matches!(
            heatmap_bce(&p, &p, &BinaryMask::new(2, 2)),
            Err(KdcError::Empty(_))
        ));
    }

    #[test]
    fn bce_ignores_excluded_pixels() {
        let mut active = BinaryMask::filled(6, 6, true);
        for x in 0..6 {
            active.set(x, 2, false);
        }
        let y = random_binary(6, 6, 3, 4);
        let a = random_field(6, 6, 3, 0.05, 0.95, 5);
        let mut b = a.clone();
        for c in 0..3 {
            for x in 0..6 {
                b.set(c, x, 2, 0.01 + 0.1 * x as f32);
            }
        }
        let ra = heatmap_bce(&a, &y, &active).unwrap();
        let rb = heatmap_bce(&b, &y, &active).unwrap();
        assert_eq!(ra.value, rb.value);
        for c in 0..3 {
            for x in 0..6 {
                assert_eq!(rb.gradient.get(c, x, 2), 0.0);
            }
        }
        assert_eq!(ra.num_active, 5 * 6 * 3);
    }

    fn single_joint_target(valid: &[(usize, usize, f32, f32)], h: usize, w: usize) -> KeyCentroidField {
        let mut base = DenseField::zeros(h, w, 2);
        let mut mask = BinaryMask::new(h, w);
        for &(x, y, dx, dy) in valid {
            mask.set(x, y, true);
            base.set(0, x, y, dx);
            base.set(1, x, y, dy);
        }
        KeyCentroidField {
            base,
            valid: vec![mask],
            response: DenseField::zeros(h, w, 1),
            radius: 32.0,
        }
    }

    #[test]
    fn keycentroid_examples() {
        let t = single_joint_target(&[(1, 1, 7.0, 6.0)], 3, 3);
        assert_eq!(keycentroid_l1(&t.base, &t).unwrap().value, 0.0);
        let r = keycentroid_l1(&DenseField::zeros(3, 3, 2), &t).unwrap();
        assert_eq!(r.value, 13.0);
        assert_eq!(r.num_active, 1);

        let t = single_joint_target(&[(0, 0, 2.0, 2.0), (2, 1, -1.0, 4.0)], 3, 3);
        let mut p = t.base.clone();
        p.set(0, 0, 0, 3.0); // error (1, 0)
        p.set(1, 2, 1, 1.0); // error (0, 3)
        let r = keycentroid_l1(&p, &t).unwrap();
        assert_eq!(r.value, 2.0);
        assert_eq!(r.gradient.get(0, 0, 0), 0.5);
        assert_eq!(r.gradient.get(1, 2, 1), -0.5);
        assert_eq!(r.gradient.get(0, 2, 1), 0.0);

        let empty = single_joint_target(&[], 3, 3);
        assert!(keycentroid_l1(&empty.base, &empty).is_err());
    }

    fn offsets(h: usize, w: usize, fg: &[(usize, usize)], values: &[(f32, f32)]) -> OffsetField {
        let mut field = DenseField::zeros(h, w, 2);
        let mut mask = BinaryMask::new(h, w);
        for (&(x, y), &(dx, dy)) in fg.iter().zip(values) {
            mask.set(x, y, true);
            field.set(0, x, y, dx);
            field.set(1, x, y, dy);
        }
        OffsetField::new(field, mask).unwrap()
    }

    #[test]
    fn offset_examples() {
        let s = generate_scene(1, (96, 96), 2).unwrap();
        let (target, _) = encode_offsets(&s, CentroidMode::Static, 5.0).unwrap();
        assert_eq!(offset_l1(&target, &target).unwrap().value, 0.0);

        let shifted = OffsetField::new(
            target.field.map(|v| v),
            target.foreground.clone(),
        )
        .unwrap();
        let mut shifted = shifted;
        for p in target.foreground.pixels() {
            let (x, y) = (p.x as usize, p.y as usize);
            let (dx, dy) = target.offset(x, y);
            shifted.field.set(0, x, y, dx + 2.0);
            shifted.field.set(1, x, y, dy - 1.0);
        }
        assert!((offset_l1(&shifted, &target).unwrap().value - 3.0).abs() < 1e-5);

        let fg = [(0, 0), (1, 2), (3, 1)];
        let t = offsets(4, 4, &fg, &[(1.0, 2.0), (-3.0, 0.5), (0.0, 0.0)]);
        let p = offsets(4, 4, &fg, &[(1.5, 1.0), (-1.0, 0.5), (-2.0, 4.0)]);
        let oracle = ((0.5 + 1.0) + (2.0 + 0.0) + (2.0 + 4.0)) / 3.0;
        assert!((offset_l1(&p, &t).unwrap().value - oracle).abs() < 1e-12);

        let none = offsets(4, 4, &[], &[]);
        assert!(offset_l1(&none, &none).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let active = BinaryMask::filled(16, 16, true);
        let y = random_binary(16, 16, 1, 9);
        let p = random_field(16, 16, 1, 0.05, 0.95, 10);
        let chk = finite_diff_check(|f| heatmap_bce(f, &y, &active), &p, 1e-4, 100, 1).unwrap();
        assert!(chk.max_rel_error < 1e-3, "{chk:?}");
        assert_eq!(chk.sampled, 100);

        let mut person_scene = generate_scene(1, (64, 64), 3).unwrap();
        person_scene.persons[0].keypoints[0] = SubPixel::new(10.0, 10.0);
        let kc = encode_keycentroid(&person_scene, 6.0).unwrap();
        let pred = random_field(64, 64, 34, -6.0, 6.0, 11);
        let chk = finite_diff_check(|f| keycentroid_l1(f, &kc), &pred, 1e-4, 100, 2).unwrap();
        assert!(chk.max_rel_error < 1e-3, "{chk:?}");
    }

    #[test]
    fn l1_kinks_are_skipped() {
        let t = single_joint_target(&[(0, 0, 1.0, 1.0), (1, 1, 2.0, -2.0)], 2, 2);
        let chk = finite_diff_check(|f| keycentroid_l1(f, &t), &t.base, 1e-4, 20, 3).unwrap();
        assert_eq!(chk.max_rel_error, 0.0);
        assert!(chk.skipped_kinks > 0);
    }

    #[test]
    fn eps_range_is_enforced() {
        let p = DenseField::constant(2, 2, 1, 0.5);
        let all = BinaryMask::filled(2, 2, true);
        assert!(finite_diff_check(|f| heatmap_bce(f, &p, &all), &p, 1e-2, 10, 0).is_err());
    }

    proptest! {
        #[test]
        fn losses_non_negative(seed in 0u64..1000) {
            let y = random_binary(6, 6, 2, seed);
            let p = random_field(6, 6, 2, 0.0, 1.0, seed + 1);
            let r = heatmap_bce(&p, &y, &BinaryMask::filled(6, 6, true)).unwrap();
            prop_assert!(r.value >= 0.0);
            let t = single_joint_target(&[(1, 1, 3.0, -2.0), (4, 5, 0.5, 0.0)], 6, 6);
            let q = random_field(6, 6, 2, -4.0, 4.0, seed + 2);
            prop_assert!(keycentroid_l1(&q, &t).unwrap().value >= 0.0);
        }

        #[test]
        fn l1_is_lipschitz_per_coordinate(seed in 0u64..1000, delta in -3.0f32..3.0) {
            let t = single_joint_target(&[(0, 0, 1.0, 1.0), (2, 1, 0.0, 4.0), (1, 2, -1.0, 0.0)], 3, 3);
            let p = random_field(3, 3, 2, -4.0, 4.0, seed);
            let mut q = p.clone();
            let v = q.get(1, 2, 1);
            q.set(1, 2, 1, v + delta);
            let a = keycentroid_l1(&p, &t).unwrap().value;
            let b = keycentroid_l1(&q, &t).unwrap().value;
            prop_assert!((a - b).abs() <= delta.abs() as f64 / 3.0 + 1e-6);
        }
    }
}
