//! Keypoint (OKS) and mask (IoU) average precision with occlusion splits.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coco::{KeypointResult, SegmentationResult};
use crate::error::{invalid, shape_mismatch, KdcError, Result};
use crate::field::{BinaryMask, SubPixel};
use crate::scene::{PersonGT, Scene};
use crate::skeleton::NUM_JOINTS;

/// COCO per-joint sigmas; the OKS constant is twice these.
pub const COCO_SIGMAS: [f64; NUM_JOINTS] = [
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072, 0.062, 0.062, 0.107, 0.107, 0.087, 0.087,
    0.089, 0.089,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Easy,
    Medium,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub oks_kappas: [f64; NUM_JOINTS],
    pub iou_thresholds: Vec<f64>,
    /// Images whose maximum occlusion is below this are easy.
    pub easy_below: f64,
    /// Images whose maximum occlusion is above this are hard.
    pub hard_above: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            oks_kappas: COCO_SIGMAS.map(|s| 2.0 * s),
            iou_thresholds: (0..10).map(|i| 0.5 + 0.05 * i as f64).collect(),
            easy_below: 0.3,
            hard_above: 0.6,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.oks_kappas.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            return Err(invalid("OKS kappas must be positive"));
        }
        if self.iou_thresholds.is_empty() {
            return Err(invalid("at least one threshold is required"));
        }
        if self.iou_thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0))
            || self.iou_thresholds.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(invalid("thresholds must be strictly increasing in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.easy_below) || !(self.easy_below..=1.0).contains(&self.hard_above) {
            return Err(invalid("split bounds must satisfy 0 <= easy_below <= hard_above <= 1"));
        }
        Ok(())
    }

    pub fn split_of(&self, max_occlusion: f64) -> Split {
        if max_occlusion < self.easy_below {
            Split::Easy
        } else if max_occlusion > self.hard_above {
            Split::Hard
        } else {
            Split::Medium
        }
    }
}

/// Object keypoint similarity over the visible ground-truth joints; `None` when none is visible.
pub fn oks(
    pred: &[Option<SubPixel>; NUM_JOINTS],
    gt: &PersonGT,
    area: f64,
    kappas: &[f64; NUM_JOINTS],
) -> Result<Option<f64>> {
    if area.is_nan() || area <= 0.0 {
        return Err(invalid(format!("area must be positive, got {area}")));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for j in (0..NUM_JOINTS).filter(|&j| gt.visible[j]) {
        n += 1;
        if let Some(p) = pred[j] {
            let d2 = p.distance_sq(gt.keypoints[j]);
            sum += (-d2 / (2.0 * area * kappas[j] * kappas[j])).exp();
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

/// Intersection over union; zero when both masks are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(shape_mismatch(
            format!("{}x{}", a.height(), a.width()),
            format!("{}x{}", b.height(), b.width()),
        ));
    }
    let union = a.union_area(b);
    Ok(if union == 0 {
        0.0
    } else {
        a.intersection_area(b) as f64 / union as f64
    })
}

/// Similarities of one image's detections against its ground truth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageMatches {
    pub scores: Vec<f64>,
    /// `sims[d][g]`
    pub sims: Vec<Vec<f64>>,
    /// Ground truth that may absorb a detection but never counts as a miss.
    pub gt_ignore: Vec<bool>,
}

impl ImageMatches {
    fn num_gt(&self) -> usize {
        self.gt_ignore.iter().filter(|&&i| !i).count()
    }
}

/// Greedy score-descending matching; returns (score, is_tp) for every non-ignored detection.
fn match_image(img: &ImageMatches, threshold: f64) -> Vec<(f64, bool)> {
    let mut order: Vec<usize> = (0..img.scores.len()).collect();
    order.sort_by(|&a, &b| img.scores[b].total_cmp(&img.scores[a]).then(a.cmp(&b)));
    let mut taken = vec![false; img.gt_ignore.len()];
    let mut out = Vec::new();
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        // Non-ignored ground truth first, as in the COCO reference.
        for pass_ignored in [false, true] {
            for (g, &sim) in img.sims[d].iter().enumerate() {
                if taken[g] || img.gt_ignore[g] != pass_ignored || sim < threshold {
                    continue;
                }
                if best.is_none_or(|(_, bs)| sim > bs) {
                    best = Some((g, sim));
                }
            }
            if best.is_some() {
                break;
            }
        }
        match best {
            Some((g, _)) => {
                taken[g] = true;
                if !img.gt_ignore[g] {
                    out.push((img.scores[d], true));
                }
            }
            None => out.push((img.scores[d], false)),
        }
    }
    out
}

/// Average precision at one threshold with 101-point interpolated precision.
pub fn average_precision(images: &[ImageMatches], threshold: f64) -> Result<f64> {
    let num_gt: usize = images.iter().map(ImageMatches::num_gt).sum();
    if num_gt == 0 {
        return Err(KdcError::Empty("no ground-truth instances".into()));
    }
    let mut dets: Vec<(f64, bool)> = images.par_iter().flat_map_iter(|img| match_image(img, threshold)).collect();
    // Stable sort keeps image order on equal scores.
    dets.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut recall = Vec::with_capacity(dets.len());
    let mut precision = Vec::with_capacity(dets.len());
    let mut tp = 0usize;
    for (i, &(_, is_tp)) in dets.iter().enumerate() {
        tp += usize::from(is_tp);
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let idx = recall.partition_point(|&x| x < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    Ok(sum / 101.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    pub ap: f64,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    /// `(threshold, AP)` pairs.
    pub per_threshold: Vec<(f64, f64)>,
    /// Mean AP per occlusion split; absent when a split has no ground truth.
    pub splits: BTreeMap<Split, f64>,
    pub num_gt: usize,
    pub num_detections: usize,
}

fn mean_ap(images: &[ImageMatches], thresholds: &[f64]) -> Result<(f64, Vec<(f64, f64)>)> {
    let per: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| average_precision(images, t).map(|ap| (t, ap)))
        .collect::<Result<_>>()?;
    let mean = per.iter().map(|p| p.1).sum::<f64>() / per.len() as f64;
    Ok((mean, per))
}

/// AP summary over all images plus per-split means.
pub fn summarize(images: &[(Split, ImageMatches)], config: &EvalConfig) -> Result<ApSummary> {
    config.validate()?;
    let all: Vec<ImageMatches> = images.iter().map(|(_, m)| m.clone()).collect();
    let (ap, per_threshold) = mean_ap(&all, &config.iou_thresholds)?;
    let at = |t: f64| per_threshold.iter().find(|p| (p.0 - t).abs() < 1e-9).map(|p| p.1);
    let mut splits = BTreeMap::new();
    for split in [Split::Easy, Split::Medium, Split::Hard] {
        let subset: Vec<ImageMatches> = images.iter().filter(|(s, _)| *s == split).map(|(_, m)| m.clone()).collect();
        if subset.iter().map(ImageMatches::num_gt).sum::<usize>() > 0 {
            splits.insert(split, mean_ap(&subset, &config.iou_thresholds)?.0);
        }
    }
    Ok(ApSummary {
        ap,
        ap50: at(0.5),
        ap75: at(0.75),
        per_threshold,
        splits,
        num_gt: all.iter().map(ImageMatches::num_gt).sum(),
        num_detections: all.iter().map(|m| m.scores.len()).sum(),
    })
}

pub fn keypoints_from_result(r: &KeypointResult) -> Result<[Option<SubPixel>; NUM_JOINTS]> {
    if r.keypoints.len() != 3 * NUM_JOINTS {
        return Err(KdcError::Format(format!(
            "keypoint result has {} values, expected {}",
            r.keypoints.len(),
            3 * NUM_JOINTS
        )));
    }
    let mut out = [None; NUM_JOINTS];
    for (j, slot) in out.iter_mut().enumerate() {
        let t = &r.keypoints[3 * j..3 * j + 3];
        if t.iter().any(|&v| v != 0.0) {
            *slot = Some(SubPixel::new(t[0], t[1]));
        }
    }
    Ok(out)
}

fn keypoint_gt_ignored(p: &PersonGT) -> bool {
    p.ignore || p.num_visible() == 0 || p.mask.area() == 0
}

fn grouped<T>(items: &[T], image_of: impl Fn(&T) -> u64) -> BTreeMap<u64, Vec<&T>> {
    let mut map: BTreeMap<u64, Vec<&T>> = BTreeMap::new();
    for it in items {
        map.entry(image_of(it)).or_default().push(it);
    }
    map
}

fn check_known_images(gt: &[(u64, Scene)], ids: impl Iterator<Item = u64>) -> Result<()> {
    for id in ids {
        if !gt.iter().any(|(g, _)| *g == id) {
            return Err(KdcError::Format(format!("result refers to unknown image {id}")));
        }
    }
    Ok(())
}

/// Keypoint AP with OKS similarity; GT area is the instance's mask area.
pub fn evaluate_keypoints(gt: &[(u64, Scene)], results: &[KeypointResult], config: &EvalConfig) -> Result<ApSummary> {
    config.validate()?;
    check_known_images(gt, results.iter().map(|r| r.image_id))?;
    let by_image = grouped(results, |r| r.image_id);
    let images = gt
        .par_iter()
        .map(|(id, scene)| {
            let dets = by_image.get(id).map(Vec::as_slice).unwrap_or(&[]);
            let mut m = ImageMatches {
                gt_ignore: scene.persons.iter().map(keypoint_gt_ignored).collect(),
                ..Default::default()
            };
            for r in dets {
                let kps = keypoints_from_result(r)?;
                let row = scene
                    .persons
                    .iter()
                    .map(|p| {
                        let area = p.mask.area() as f64;
                        if area == 0.0 {
                            return Ok(0.0);
                        }
                        Ok(oks(&kps, p, area, &config.oks_kappas)?.unwrap_or(0.0))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                m.scores.push(r.score);
                m.sims.push(row);
            }
            Ok((config.split_of(scene.max_occlusion()), m))
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(&images, config)
}

/// Mask AP with IoU similarity against owned (visible) masks.
pub fn evaluate_masks(gt: &[(u64, Scene)], results: &[SegmentationResult], config: &EvalConfig) -> Result<ApSummary> {
    config.validate()?;
    check_known_images(gt, results.iter().map(|r| r.image_id))?;
    let by_image = grouped(results, |r| r.image_id);
    let images = gt
        .par_iter()
        .map(|(id, scene)| {
            let dets = by_image.get(id).map(Vec::as_slice).unwrap_or(&[]);
            let mut m = ImageMatches {
                gt_ignore: scene.persons.iter().map(|p| p.ignore || p.mask.area() == 0).collect(),
                ..Default::default()
            };
            for r in dets {
                let mask = r.segmentation.decode()?;
                let row = scene
                    .persons
                    .iter()
                    .map(|p| mask_iou(&mask, &p.mask))
                    .collect::<Result<Vec<f64>>>()?;
                m.scores.push(r.score);
                m.sims.push(row);
            }
            Ok((config.split_of(scene.max_occlusion()), m))
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(&images, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub keypoints: ApSummary,
    pub masks: ApSummary,
    pub images: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::generate_scene;
    use proptest::prelude::{prop_assert, proptest};

    fn one_match(sims: &[f64], scores: &[f64], num_gt: usize) -> ImageMatches {
        ImageMatches {
            scores: scores.to_vec(),
            sims: sims.chunks(num_gt).map(<[f64]>::to_vec).collect(),
            gt_ignore: vec![false; num_gt],
        }
    }

    #[test]
    fn oks_examples() {
        let s = generate_scene(1, (128, 128), 3).unwrap();
        let p = &s.persons[0];
        let k = EvalConfig::default().oks_kappas;
        let exact = p.keypoints.map(Some);
        assert_eq!(oks(&exact, p, 500.0, &k).unwrap(), Some(1.0));
        let far = p.keypoints.map(|q| Some(SubPixel::new(q.x + 1e9, q.y)));
        assert!(oks(&far, p, 500.0, &k).unwrap().unwrap() < 1e-12);

        let mut single = p.clone();
        single.visible = [false; NUM_JOINTS];
        single.visible[5] = true;
        let area = 400.0;
        let d = (2.0 * area * k[5] * k[5]).sqrt();
        let mut pred = exact;
        pred[5] = Some(SubPixel::new(p.keypoints[5].x + d, p.keypoints[5].y));
        let v = oks(&pred, &single, area, &k).unwrap().unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-12);

        single.visible = [false; NUM_JOINTS];
        assert_eq!(oks(&exact, &single, area, &k).unwrap(), None);
        assert!(oks(&exact, p, 0.0, &k).is_err());
    }

    #[test]
    fn iou_examples() {
        let square = |x0: usize| {
            let mut m = BinaryMask::new(20, 20);
            for y in 0..10 {
                for x in x0..x0 + 10 {
                    m.set(x, y, true);
                }
            }
            m
        };
        assert_eq!(mask_iou(&square(0), &square(0)).unwrap(), 1.0);
        assert_eq!(mask_iou(&square(0), &square(10)).unwrap(), 0.0);
        assert!((mask_iou(&square(0), &square(5)).unwrap() - 50.0 / 150.0).abs() < 1e-15);
        assert_eq!(mask_iou(&BinaryMask::new(3, 3), &BinaryMask::new(3, 3)).unwrap(), 0.0);
        assert!(mask_iou(&BinaryMask::new(3, 3), &BinaryMask::new(3, 4)).is_err());
    }

    #[test]
    fn ap_examples() {
        // TP, FP, TP against two GT: monotone precision 1, 2/3, 2/3.
        let m = one_match(&[0.9, 0.0, 0.0, 0.0, 0.0, 0.9], &[0.9, 0.8, 0.7], 2);
        let ap = average_precision(&[m], 0.5).unwrap();
        assert!((ap - (51.0 + 50.0 * 2.0 / 3.0) / 101.0).abs() < 1e-12);

        // A duplicate after the TP is a FP that does not lower interpolated precision.
        let dup = one_match(&[1.0, 1.0], &[0.9, 0.8], 1);
        assert_eq!(average_precision(&[dup], 0.5).unwrap(), 1.0);

        // Duplicate ranked first: FP then TP gives precision 1/2 everywhere.
        let first = one_match(&[0.4, 1.0], &[0.9, 0.8], 1);
        assert_eq!(average_precision(&[first], 0.5).unwrap(), 0.5);

        let empty = ImageMatches {
            gt_ignore: vec![false],
            ..Default::default()
        };
        assert_eq!(average_precision(&[empty], 0.5).unwrap(), 0.0);
        assert!(average_precision(&[ImageMatches::default()], 0.5).is_err());
    }

    #[test]
    fn ignored_ground_truth_absorbs_detections() {
        let m = ImageMatches {
            scores: vec![0.9, 0.8],
            sims: vec![vec![0.0, 0.9], vec![0.9, 0.0]],
            gt_ignore: vec![false, true],
        };
        assert_eq!(average_precision(&[m], 0.5).unwrap(), 1.0);
    }

    #[test]
    fn identical_predictions_score_one() {
        let scenes: Vec<(u64, Scene)> = (0..3).map(|i| (i, generate_scene(2, (401, 401), i).unwrap())).collect();
        let mut kps = Vec::new();
        let mut segs = Vec::new();
        for (id, s) in &scenes {
            for p in &s.persons {
                let mut flat = Vec::new();
                for q in p.keypoints {
                    flat.extend([q.x, q.y, 1.0]);
                }
                kps.push(KeypointResult {
                    image_id: *id,
                    category_id: 1,
                    keypoints: flat,
                    score: 1.0,
                });
                segs.push(SegmentationResult {
                    image_id: *id,
                    category_id: 1,
                    segmentation: crate::rle::Rle::encode(&p.mask),
                    score: 1.0,
                });
            }
        }
        let cfg = EvalConfig::default();
        let k = evaluate_keypoints(&scenes, &kps, &cfg).unwrap();
        assert_eq!(k.ap, 1.0);
        assert_eq!(k.ap50, Some(1.0));
        assert_eq!(k.splits.get(&Split::Easy), Some(&1.0));
        assert_eq!(evaluate_masks(&scenes, &segs, &cfg).unwrap().ap, 1.0);
        assert_eq!(evaluate_masks(&scenes, &[], &cfg).unwrap().ap, 0.0);
        segs[0].image_id = 99;
        assert!(evaluate_masks(&scenes, &segs, &cfg).is_err());
    }

    #[test]
    fn config_validation_and_splits() {
        let cfg = EvalConfig::default();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.split_of(0.1), Split::Easy);
        assert_eq!(cfg.split_of(0.3), Split::Medium);
        assert_eq!(cfg.split_of(0.6), Split::Medium);
        assert_eq!(cfg.split_of(0.61), Split::Hard);
        let mut bad = cfg.clone();
        bad.iou_thresholds = vec![0.5, 0.5];
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.oks_kappas[3] = 0.0;
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn oks_translation_invariant(seed in 0u64..50, dx in -30.0f64..30.0, dy in -30.0f64..30.0, jitter in 0.0f64..5.0) {
            let s = generate_scene(1, (128, 128), seed).unwrap();
            let p = s.persons[0].clone();
            let k = EvalConfig::default().oks_kappas;
            let pred = p.keypoints.map(|q| Some(SubPixel::new(q.x + jitter, q.y - jitter)));
            let base = oks(&pred, &p, 300.0, &k).unwrap().unwrap();
            let mut moved = p.clone();
            moved.keypoints = p.keypoints.map(|q| SubPixel::new(q.x + dx, q.y + dy));
            let pred2 = pred.map(|q| q.map(|q| SubPixel::new(q.x + dx, q.y + dy)));
            let shifted = oks(&pred2, &moved, 300.0, &k).unwrap().unwrap();
            prop_assert!((base - shifted).abs() < 1e-9);
        }

        #[test]
        fn ap_non_increasing_in_threshold(sims in proptest::collection::vec(0.0f64..1.0, 12), scores in proptest::collection::vec(0.0f64..1.0, 4)) {
            let m = one_match(&sims, &scores, 3);
            let mut last = f64::INFINITY;
            for t in [0.1, 0.3, 0.5, 0.7, 0.9] {
                let ap = average_precision(std::slice::from_ref(&m), t).unwrap();
                prop_assert!(ap <= last + 1e-12);
                last = ap;
            }
        }
    }
}
