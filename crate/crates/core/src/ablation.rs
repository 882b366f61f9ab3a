//! Seeded ablation trials on occluded synthetic pairs.

use serde::{Deserialize, Serialize};

use crate::encode::{encode_scene, CentroidMode};
use crate::error::Result;
use crate::eval::mask_iou;
use crate::field::BinaryMask;
use crate::pipeline::{decode, DecodeConfig, FieldSet, NoiseConfig};
use crate::pose::{decode_poses, PoseConfig, RefinedKeypoint};
use crate::scene::{generate_occluded, Scene};
use crate::seg::{decode_segmentation, SegConfig};
use crate::skeleton::Skeleton;

/// Canvas, overlap target and person count shared by the trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialScene {
    pub canvas: usize,
    pub overlap: f64,
}

impl Default for TrialScene {
    fn default() -> Self {
        Self {
            canvas: 401,
            overlap: 0.7,
        }
    }
}

/// Two persons pushed into each other until `overlap` of the back one is covered (or as far as possible).
pub fn occluded_pair(trial: &TrialScene, seed: u64) -> Result<Scene> {
    Ok(generate_occluded(2, (trial.canvas, trial.canvas), trial.overlap, seed)?.0.scene)
}

/// Mean IoU over GT instances after greedy one-to-one matching by IoU; unmatched GT score zero.
pub fn matched_mask_iou(gt: &[BinaryMask], pred: &[BinaryMask]) -> Result<f64> {
    if gt.is_empty() {
        return Ok(0.0);
    }
    let mut pairs = Vec::new();
    for (g, gm) in gt.iter().enumerate() {
        for (p, pm) in pred.iter().enumerate() {
            pairs.push((mask_iou(gm, pm)?, g, p));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_g = vec![false; gt.len()];
    let mut used_p = vec![false; pred.len()];
    let mut total = 0.0;
    for (iou, g, p) in pairs {
        if !used_g[g] && !used_p[p] && iou > 0.0 {
            used_g[g] = true;
            used_p[p] = true;
            total += iou;
        }
    }
    Ok(total / gt.len() as f64)
}

/// Pixels within `width` (Chebyshev) of a boundary of any mask.
pub fn boundary_band(masks: &[BinaryMask], width: usize) -> BinaryMask {
    let (h, w) = (masks[0].height(), masks[0].width());
    let mut band = BinaryMask::new(h, w);
    let r = width as i64;
    for m in masks {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let v = m.get(x as usize, y as usize);
                let edge = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                    .iter()
                    .any(|&(dx, dy)| m.get_signed(x + dx, y + dy) != v);
                if !edge {
                    continue;
                }
                for yy in (y - r).max(0)..=(y + r).min(h as i64 - 1) {
                    for xx in (x - r).max(0)..=(x + r).min(w as i64 - 1) {
                        band.set(xx as usize, yy as usize, true);
                    }
                }
            }
        }
    }
    band
}

fn restrict(m: &BinaryMask, band: &BinaryMask) -> BinaryMask {
    let data = m.data().iter().zip(band.data()).map(|(&a, &b)| a && b).collect();
    BinaryMask::from_vec(m.height(), m.width(), data).expect("same shape")
}

fn seg_masks(fields: &FieldSet, decode_cfg: &DecodeConfig) -> Result<Vec<BinaryMask>> {
    let out = decode(fields, &Skeleton::coco(), decode_cfg)?;
    Ok(out.instances().iter().filter_map(|i| i.mask.clone()).collect())
}

fn noisy_fields(scene: &Scene, radius: f64, mode: CentroidMode, noise: &NoiseConfig, seed: u64) -> Result<FieldSet> {
    let enc = encode_scene(scene, radius, crate::encode::DEFAULT_SIGMA_INSTANCE)?;
    FieldSet::from_encoded(&enc, mode).perturbed(noise, seed ^ 0x5eed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeTrial {
    pub seed: u64,
    pub static_iou: f64,
    pub dynamic_iou: f64,
}

/// Static vs dynamic centroids on one occluded pair with offset noise.
pub fn centroid_mode_trial(trial: &TrialScene, offset_noise: f64, seed: u64) -> Result<ModeTrial> {
    let scene = occluded_pair(trial, seed)?;
    let gt: Vec<BinaryMask> = scene.persons.iter().map(|p| p.mask.clone()).collect();
    let noise = NoiseConfig {
        offset: offset_noise,
        heatmap: 0.0,
    };
    let mut iou = [0.0; 2];
    for (k, mode) in [CentroidMode::Static, CentroidMode::Dynamic].into_iter().enumerate() {
        let fields = noisy_fields(&scene, 32.0, mode, &noise, seed)?;
        let cfg = DecodeConfig {
            seg: SegConfig {
                mode,
                ..SegConfig::default()
            },
            ..DecodeConfig::default()
        };
        iou[k] = matched_mask_iou(&gt, &seg_masks(&fields, &cfg)?)?;
    }
    Ok(ModeTrial {
        seed,
        static_iou: iou[0],
        dynamic_iou: iou[1],
    })
}

/// Pixel radius around a GT keypoint inside which refined keypoints are scored.
pub const LOCALIZATION_CORE: f64 = 8.0;

/// Mean distance from refined keypoints to their GT keypoint, over refined
/// keypoints whose source candidate lies within [`LOCALIZATION_CORE`] of a
/// visible GT keypoint of the same joint. Returns the error sum and count.
pub fn localization_error(scene: &Scene, refined: &[RefinedKeypoint]) -> (f64, usize) {
    let (mut sum, mut n) = (0.0, 0usize);
    for k in refined {
        let src = k.source.to_subpixel();
        let nearest = scene
            .persons
            .iter()
            .filter(|p| p.visible[k.joint])
            .map(|p| p.keypoints[k.joint])
            .min_by(|a, b| a.distance_sq(src).total_cmp(&b.distance_sq(src)));
        if let Some(q) = nearest.filter(|q| q.distance(src) <= LOCALIZATION_CORE) {
            sum += k.position.distance(q);
            n += 1;
        }
    }
    (sum, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusTrial {
    pub seed: u64,
    pub radius: f64,
    pub mean_error: f64,
    pub scored: usize,
}

/// Refined-keypoint localization error at one disk radius under heatmap and displacement noise.
pub fn radius_trial(trial: &TrialScene, radius: f64, noise: &NoiseConfig, seed: u64) -> Result<RadiusTrial> {
    let scene = occluded_pair(trial, seed)?;
    let fields = noisy_fields(&scene, radius, CentroidMode::Dynamic, noise, seed)?;
    let out = decode_poses(&fields.heatmaps, &fields.keycentroid, &Skeleton::coco(), &PoseConfig::with_radius(radius))?;
    let (sum, n) = localization_error(&scene, &out.refined);
    Ok(RadiusTrial {
        seed,
        radius,
        mean_error: if n > 0 { sum / n as f64 } else { f64::NAN },
        scored: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgoTrial {
    pub seed: u64,
    pub sigma: f64,
    pub boundary_iou: f64,
}

/// Band half-width used for boundary IoU.
pub const BOUNDARY_BAND: usize = 2;

/// Boundary-band mask IoU on an entangled pair for one IGO σ, dynamic centroids.
pub fn igo_trial(trial: &TrialScene, sigma: f64, offset_noise: f64, seed: u64) -> Result<IgoTrial> {
    let scene = occluded_pair(trial, seed)?;
    let fields = noisy_fields(
        &scene,
        32.0,
        CentroidMode::Dynamic,
        &NoiseConfig {
            offset: offset_noise,
            heatmap: 0.0,
        },
        seed,
    )?;
    let skel = Skeleton::coco();
    let pose = decode_poses(&fields.heatmaps, &fields.keycentroid, &skel, &PoseConfig::default())?;
    let cfg = SegConfig {
        sigma_igo: sigma,
        ..SegConfig::default()
    };
    let seg = decode_segmentation(&fields.offsets, &fields.foreground, &pose.poses, &cfg)?;
    let pred: Vec<BinaryMask> = seg.instances.iter().filter_map(|i| i.mask.clone()).collect();
    let gt: Vec<BinaryMask> = scene.persons.iter().map(|p| p.mask.clone()).collect();
    let band = boundary_band(&gt, BOUNDARY_BAND);
    let gt_b: Vec<BinaryMask> = gt.iter().map(|m| restrict(m, &band)).collect();
    let pred_b: Vec<BinaryMask> = pred.iter().map(|m| restrict(m, &band)).collect();
    Ok(IgoTrial {
        seed,
        sigma,
        boundary_iou: matched_mask_iou(&gt_b, &pred_b)?,
    })
}

/// Mean of finite values.
pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}
