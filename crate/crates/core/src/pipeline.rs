//! End-to-end decoding of encoded fields into COCO-style results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::coco::{KeypointResult, SegmentationResult, PERSON_CATEGORY};
use crate::encode::{CentroidMode, EncodedScene};
use crate::error::{invalid, shape_mismatch, Result};
use crate::field::{BinaryMask, DenseField};
use crate::pose::{decode_poses, PoseConfig, PoseDecode};
use crate::rle::Rle;
use crate::seg::{decode_segmentation, Instance, SegConfig, SegDecode};
use crate::skeleton::{Skeleton, NUM_JOINTS};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub pose: PoseConfig,
    pub seg: SegConfig,
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        self.pose.validate()?;
        self.seg.validate()
    }
}

/// Standard deviations of additive Gaussian perturbations, in field units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Applied to instance offsets and KeyCentroid displacements (pixels).
    pub offset: f64,
    /// Applied to heatmap activations, which are then clamped to `[0, 1]`.
    pub heatmap: f64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("offset noise", self.offset), ("heatmap noise", self.heatmap)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.offset == 0.0 && self.heatmap == 0.0
    }
}

/// The dense fields a network would predict for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSet {
    pub heatmaps: DenseField,
    /// 34 channels: `dx, dy` per joint.
    pub keycentroid: DenseField,
    /// 2 channels: `dx, dy` towards the instance centroid.
    pub offsets: DenseField,
    pub foreground: BinaryMask,
}

impl FieldSet {
    pub fn from_encoded(enc: &EncodedScene, mode: CentroidMode) -> Self {
        Self {
            heatmaps: enc.heatmaps.clone(),
            keycentroid: enc.keycentroid.base.clone(),
            offsets: enc.offsets(mode).field.clone(),
            foreground: enc.foreground.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.heatmaps.height(), self.heatmaps.width());
        let expect = |f: &DenseField, c: usize| -> Result<()> {
            if f.height() != h || f.width() != w || f.channels() != c {
                return Err(shape_mismatch(format!("{h}x{w}x{c}"), f.shape_string()));
            }
            Ok(())
        };
        expect(&self.heatmaps, NUM_JOINTS)?;
        expect(&self.keycentroid, 2 * NUM_JOINTS)?;
        expect(&self.offsets, 2)?;
        if self.foreground.height() != h || self.foreground.width() != w {
            return Err(shape_mismatch(
                format!("{h}x{w}"),
                format!("{}x{}", self.foreground.height(), self.foreground.width()),
            ));
        }
        Ok(())
    }

    /// Adds seeded Gaussian noise; offsets are perturbed on foreground pixels only.
    pub fn perturbed(&self, noise: &NoiseConfig, seed: u64) -> Result<FieldSet> {
        noise.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        if noise.heatmap > 0.0 {
            let n = Normal::new(0.0, noise.heatmap).map_err(|e| invalid(e.to_string()))?;
            out.heatmaps = self.heatmaps.map(|v| (v as f64 + n.sample(&mut rng)).clamp(0.0, 1.0) as f32);
        }
        if noise.offset > 0.0 {
            let n = Normal::new(0.0, noise.offset).map_err(|e| invalid(e.to_string()))?;
            out.keycentroid = self.keycentroid.map(|v| (v as f64 + n.sample(&mut rng)) as f32);
            let w = self.offsets.width();
            let fg = self.foreground.data();
            for c in 0..2 {
                for (i, v) in out.offsets.channel_mut(c).iter_mut().enumerate() {
                    if fg[i] {
                        *v = (*v as f64 + n.sample(&mut rng)) as f32;
                    }
                }
            }
            debug_assert_eq!(fg.len(), w * self.offsets.height());
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub pose: PoseDecode,
    pub seg: SegDecode,
}

impl Decoded {
    pub fn instances(&self) -> &[Instance] {
        &self.seg.instances
    }
}

pub fn decode(fields: &FieldSet, skeleton: &Skeleton, config: &DecodeConfig) -> Result<Decoded> {
    config.validate()?;
    fields.validate()?;
    let pose = decode_poses(&fields.heatmaps, &fields.keycentroid, skeleton, &config.pose)?;
    let seg = decode_segmentation(&fields.offsets, &fields.foreground, &pose.poses, &config.seg)?;
    Ok(Decoded { pose, seg })
}

/// COCO-style results for one image: one keypoint entry per posed instance and
/// one segmentation entry per non-empty mask.
pub fn to_results(image_id: u64, instances: &[Instance]) -> (Vec<KeypointResult>, Vec<SegmentationResult>) {
    let mut kps = Vec::new();
    let mut segs = Vec::new();
    for inst in instances {
        if let Some(pose) = &inst.pose {
            let mut flat = Vec::with_capacity(3 * NUM_JOINTS);
            for j in &pose.joints {
                match j {
                    Some(k) => flat.extend([k.position.x, k.position.y, k.confidence]),
                    None => flat.extend([0.0; 3]),
                }
            }
            kps.push(KeypointResult {
                image_id,
                category_id: PERSON_CATEGORY,
                keypoints: flat,
                score: inst.score,
            });
        }
        if let Some(mask) = inst.mask.as_ref().filter(|m| !m.is_empty()) {
            segs.push(SegmentationResult {
                image_id,
                category_id: PERSON_CATEGORY,
                segmentation: Rle::encode(mask),
                score: inst.score,
            });
        }
    }
    (kps, segs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::encode_scene;
    use crate::eval::{evaluate_keypoints, evaluate_masks, EvalConfig};
    use crate::scene::generate_scene;

    #[test]
    fn noiseless_roundtrip_is_exact() {
        let skel = Skeleton::coco();
        for mode in [CentroidMode::Static, CentroidMode::Dynamic] {
            let mut gt = Vec::new();
            let mut kps = Vec::new();
            let mut segs = Vec::new();
            for seed in 0..4 {
                let s = generate_scene(1 + seed as usize % 4, (401, 401), seed).unwrap();
                let enc = encode_scene(&s, 32.0, 5.0).unwrap();
                let fields = FieldSet::from_encoded(&enc, mode);
                let cfg = DecodeConfig {
                    seg: SegConfig {
                        mode,
                        ..SegConfig::default()
                    },
                    ..DecodeConfig::default()
                };
                let out = decode(&fields, &skel, &cfg).unwrap();
                assert_eq!(out.pose.poses.len(), s.persons.len());
                let (k, m) = to_results(seed, out.instances());
                kps.extend(k);
                segs.extend(m);
                gt.push((seed, s));
            }
            let cfg = EvalConfig::default();
            assert_eq!(evaluate_keypoints(&gt, &kps, &cfg).unwrap().ap, 1.0);
            assert_eq!(evaluate_masks(&gt, &segs, &cfg).unwrap().ap, 1.0);
        }
    }

    #[test]
    fn perturbation_is_seeded_and_keeps_background() {
        let s = generate_scene(2, (160, 160), 1).unwrap();
        let enc = encode_scene(&s, 16.0, 5.0).unwrap();
        let f = FieldSet::from_encoded(&enc, CentroidMode::Dynamic);
        let noise = NoiseConfig {
            offset: 1.5,
            heatmap: 0.1,
        };
        let a = f.perturbed(&noise, 3).unwrap();
        assert_eq!(a, f.perturbed(&noise, 3).unwrap());
        assert_ne!(a, f.perturbed(&noise, 4).unwrap());
        assert!(a.heatmaps.data().iter().all(|v| (0.0..=1.0).contains(v)));
        for (i, &fg) in f.foreground.data().iter().enumerate() {
            if !fg {
                assert_eq!(a.offsets.channel(0)[i], 0.0);
            }
        }
        assert_eq!(f.perturbed(&NoiseConfig::default(), 3).unwrap(), f);
        assert!(f
            .perturbed(
                &NoiseConfig {
                    offset: -1.0,
                    heatmap: 0.0
                },
                0
            )
            .is_err());
    }

    #[test]
    fn shape_errors_are_reported() {
        let s = generate_scene(1, (128, 128), 1).unwrap();
        let enc = encode_scene(&s, 8.0, 5.0).unwrap();
        let mut f = FieldSet::from_encoded(&enc, CentroidMode::Static);
        f.offsets = DenseField::zeros(128, 128, 3);
        assert!(decode(&f, &Skeleton::coco(), &DecodeConfig::default()).is_err());
    }
}
