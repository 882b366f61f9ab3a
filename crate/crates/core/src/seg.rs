//! Instance segmentation from MaskCentroid offsets: pixel embeddings, Gaussian
//! membership, dynamic centroid clustering, smoothing and mask assignment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encode::{CentroidMode, MaskCentroidSet, DEFAULT_SIGMA_INSTANCE};
use crate::error::{invalid, shape_mismatch, KdcError, Result};
use crate::field::{smooth_gaussian, BinaryMask, DenseField, GridPoint, SubPixel};
use crate::pose::PersonPose;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegConfig {
    pub mode: CentroidMode,
    pub sigma_instance: f64,
    pub sigma_igo: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Minimum embedding support for a centroid found without a pose.
    pub min_cluster_pixels: usize,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self {
            mode: CentroidMode::Dynamic,
            sigma_instance: DEFAULT_SIGMA_INSTANCE,
            sigma_igo: 0.1,
            max_iters: 20,
            tol: 1e-3,
            min_cluster_pixels: 20,
        }
    }
}

impl SegConfig {
    pub fn validate(&self) -> Result<()> {
        check_sigma(self.sigma_instance)?;
        check_igo_sigma(self.sigma_igo)?;
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be at least 1"));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(invalid(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("sigma_instance must be positive, got {sigma}")))
    }
}

fn check_igo_sigma(sigma: f64) -> Result<()> {
    if (0.1..=1.0).contains(&sigma) {
        Ok(())
    } else {
        Err(invalid(format!("IGO sigma must lie in [0.1, 1], got {sigma}")))
    }
}

/// Distance below which membership exceeds 0.5.
pub fn assignment_radius(sigma: f64) -> f64 {
    sigma * (2.0 * std::f64::consts::LN_2).sqrt()
}

pub fn membership_value(e: SubPixel, c: SubPixel, sigma: f64) -> f64 {
    (-e.distance_sq(c) / (2.0 * sigma * sigma)).exp()
}

/// Foreground pixels and their embeddings `e = m + v`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<GridPoint>,
    pub values: Vec<SubPixel>,
}

impl Embeddings {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

pub fn embed_pixels(offsets: &DenseField, foreground: &BinaryMask) -> Result<Embeddings> {
    if offsets.channels() != 2 || offsets.height() != foreground.height() || offsets.width() != foreground.width() {
        return Err(shape_mismatch(
            format!("{}x{}x2", foreground.height(), foreground.width()),
            offsets.shape_string(),
        ));
    }
    let pixels: Vec<GridPoint> = foreground.pixels().collect();
    let values = pixels
        .iter()
        .map(|p| {
            let (x, y) = (p.x as usize, p.y as usize);
            SubPixel::new(
                p.x as f64 + offsets.get(0, x, y) as f64,
                p.y as f64 + offsets.get(1, x, y) as f64,
            )
        })
        .collect();
    Ok(Embeddings {
        height: foreground.height(),
        width: foreground.width(),
        pixels,
        values,
    })
}

/// Per-instance membership planes, zero on background.
pub fn membership(emb: &Embeddings, centroids: &[SubPixel], sigma: f64) -> Result<DenseField> {
    check_sigma(sigma)?;
    if centroids.is_empty() {
        return Err(KdcError::Empty("no centroids".into()));
    }
    let planes: Vec<Vec<f32>> = centroids
        .par_iter()
        .map(|&c| {
            let mut plane = vec![0.0f32; emb.height * emb.width];
            for (p, &e) in emb.pixels.iter().zip(&emb.values) {
                plane[p.y as usize * emb.width + p.x as usize] = membership_value(e, c, sigma) as f32;
            }
            plane
        })
        .collect();
    DenseField::from_planes(emb.height, emb.width, planes)
}

/// Membership against fixed per-instance centroids.
pub fn membership_static(emb: &Embeddings, set: &MaskCentroidSet) -> Result<DenseField> {
    let Some(first) = set.centroids.first() else {
        return Err(KdcError::Empty("no centroids".into()));
    };
    if set.centroids.iter().any(|c| c.sigma != first.sigma) {
        return Err(invalid("centroids must share one sigma"));
    }
    let cs: Vec<SubPixel> = set.centroids.iter().map(|c| c.centroid).collect();
    membership(emb, &cs, first.sigma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicClustering {
    pub centroids: Vec<SubPixel>,
    /// Pixel count assigned to each centroid in the last iteration.
    pub support: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

/// Alternates hard assignment (membership above 0.5, nearest centroid, lower
/// index on ties) and centroid re-estimation as the mean of assigned
/// embeddings. Clusters that lose every pixel keep their previous centroid.
pub fn cluster_dynamic(
    emb: &Embeddings,
    seeds: &[SubPixel],
    sigma: f64,
    max_iters: usize,
    tol: f64,
) -> Result<DynamicClustering> {
    check_sigma(sigma)?;
    if seeds.is_empty() {
        return Err(KdcError::Empty("no seeds".into()));
    }
    if max_iters == 0 {
        return Err(invalid("max_iters must be at least 1"));
    }
    let radius2 = assignment_radius(sigma).powi(2);
    let mut centroids = seeds.to_vec();
    let mut support = vec![0; seeds.len()];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![(0.0f64, 0.0f64, 0usize); centroids.len()];
        for &e in &emb.values {
            if let Some(k) = nearest_within(e, &centroids, radius2) {
                sums[k].0 += e.x;
                sums[k].1 += e.y;
                sums[k].2 += 1;
            }
        }
        let mut moved = 0.0f64;
        for (c, &(sx, sy, n)) in centroids.iter_mut().zip(&sums) {
            if n > 0 {
                let next = SubPixel::new(sx / n as f64, sy / n as f64);
                moved = moved.max(next.distance(*c));
                *c = next;
            }
        }
        support = sums.iter().map(|s| s.2).collect();
        if moved < tol {
            converged = true;
            break;
        }
    }
    Ok(DynamicClustering {
        centroids,
        support,
        iterations,
        converged,
    })
}

fn nearest_within(e: SubPixel, centroids: &[SubPixel], radius2: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, c) in centroids.iter().enumerate() {
        let d2 = e.distance_sq(*c);
        if d2 < radius2 && best.is_none_or(|(_, bd)| d2 < bd) {
            best = Some((k, d2));
        }
    }
    best.map(|(k, _)| k)
}

/// Smooths every membership plane and clamps to `[0, 1]`.
pub fn igo_smooth(probs: &DenseField, sigma: f64) -> Result<DenseField> {
    check_igo_sigma(sigma)?;
    let smoothed = smooth_gaussian(probs, &vec![sigma; probs.channels()])?;
    Ok(smoothed.map(|v| v.clamp(0.0, 1.0)))
}

/// Assigns each pixel to its highest-membership instance (lower index on ties)
/// when that membership is strictly above 0.5.
pub fn finalize_masks(probs: &DenseField) -> Vec<BinaryMask> {
    let (h, w, k) = (probs.height(), probs.width(), probs.channels());
    let mut masks = vec![BinaryMask::new(h, w); k];
    for y in 0..h {
        for x in 0..w {
            let mut best: Option<(usize, f32)> = None;
            for c in 0..k {
                let v = probs.get(c, x, y);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((c, v));
                }
            }
            if let Some((c, v)) = best {
                if v > 0.5 {
                    masks[c].set(x, y, true);
                }
            }
        }
    }
    masks
}

/// Embeddings bucketed by their rounded in-canvas position.
struct EmbeddingIndex {
    width: usize,
    height: usize,
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl EmbeddingIndex {
    fn new(emb: &Embeddings, keep: impl Fn(usize) -> bool) -> Self {
        let (h, w) = (emb.height, emb.width);
        let cell = |e: SubPixel| -> Option<usize> {
            let p = e.round();
            (p.x >= 0 && p.y >= 0 && (p.x as usize) < w && (p.y as usize) < h)
                .then(|| p.y as usize * w + p.x as usize)
        };
        let mut counts = vec![0u32; h * w + 1];
        for (i, &e) in emb.values.iter().enumerate() {
            if keep(i) {
                if let Some(c) = cell(e) {
                    counts[c + 1] += 1;
                }
            }
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; counts[h * w] as usize];
        for (i, &e) in emb.values.iter().enumerate() {
            if keep(i) {
                if let Some(c) = cell(e) {
                    items[fill[c] as usize] = i as u32;
                    fill[c] += 1;
                }
            }
        }
        Self {
            width: w,
            height: h,
            starts: counts,
            items,
        }
    }

    fn count_at(&self, cell: usize) -> u32 {
        self.starts[cell + 1] - self.starts[cell]
    }

    /// Visits embeddings within `radius` of `at`.
    fn for_each_near(&self, emb: &Embeddings, at: SubPixel, radius: f64, mut f: impl FnMut(SubPixel)) {
        let r2 = radius * radius;
        let reach = radius.ceil() as i64 + 1;
        let (cx, cy) = (at.x.round() as i64, at.y.round() as i64);
        for y in (cy - reach).max(0)..=(cy + reach).min(self.height as i64 - 1) {
            for x in (cx - reach).max(0)..=(cx + reach).min(self.width as i64 - 1) {
                let cell = y as usize * self.width + x as usize;
                for &i in &self.items[self.starts[cell] as usize..self.starts[cell + 1] as usize] {
                    let e = emb.values[i as usize];
                    if e.distance_sq(at) <= r2 {
                        f(e);
                    }
                }
            }
        }
    }

    fn support(&self, emb: &Embeddings, at: SubPixel, radius: f64) -> usize {
        let mut n = 0;
        self.for_each_near(emb, at, radius, |_| n += 1);
        n
    }
}

/// Finds embedding clusters without pose guidance.
///
/// Density peaks of the rounded embedding histogram are refined by flat-kernel
/// mean shift over the assignment radius; a centroid is kept when its support
/// reaches `min_pixels` and it is not within twice the assignment radius of a
/// stronger one.
pub fn find_centroids(emb: &Embeddings, sigma: f64, min_pixels: usize, keep: impl Fn(usize) -> bool) -> Result<Vec<SubPixel>> {
    check_sigma(sigma)?;
    let index = EmbeddingIndex::new(emb, keep);
    let (h, w) = (emb.height, emb.width);
    if h == 0 || w == 0 {
        return Ok(Vec::new());
    }
    let mut hist = DenseField::zeros(h, w, 1);
    for cell in 0..h * w {
        let n = index.count_at(cell);
        if n > 0 {
            hist.set(0, cell % w, cell / w, n as f32);
        }
    }
    let density = smooth_gaussian(&hist, &[1.0])?;
    let plane = density.channel(0);
    let mut peaks: Vec<(f32, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = plane[y * w + x];
            if v <= 0.0 {
                continue;
            }
            let mut is_peak = true;
            'nb: for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    if plane[yy * w + xx] > v {
                        is_peak = false;
                        break 'nb;
                    }
                }
            }
            if is_peak {
                peaks.push((v, y * w + x));
            }
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let radius = assignment_radius(sigma);
    let mut found: Vec<(SubPixel, usize)> = Vec::new();
    for (_, cell) in peaks {
        let mut at = SubPixel::new((cell % w) as f64, (cell / w) as f64);
        if found.iter().any(|(c, _)| c.distance(at) <= 2.0 * radius) {
            continue;
        }
        for _ in 0..30 {
            let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
            index.for_each_near(emb, at, radius, |e| {
                sx += e.x;
                sy += e.y;
                n += 1;
            });
            if n == 0 {
                break;
            }
            let next = SubPixel::new(sx / n as f64, sy / n as f64);
            let shift = next.distance(at);
            at = next;
            if shift < 1e-4 {
                break;
            }
        }
        let support = index.support(emb, at, radius);
        if support < min_pixels.max(1) || found.iter().any(|(c, _)| c.distance(at) <= 2.0 * radius) {
            continue;
        }
        found.push((at, support));
    }
    Ok(found.into_iter().map(|(c, _)| c).collect())
}

/// One pose seed per pose (in pose order): the joint with the most embedding
/// support, or `None` when every joint of the pose is already taken by a
/// stronger seed or has no support.
pub fn seeds_from_poses(emb: &Embeddings, poses: &[PersonPose], sigma: f64) -> Result<Vec<Option<SubPixel>>> {
    check_sigma(sigma)?;
    let index = EmbeddingIndex::new(emb, |_| true);
    let radius = assignment_radius(sigma);
    let mut order: Vec<usize> = (0..poses.len()).collect();
    order.sort_by(|&a, &b| poses[b].instance_score.total_cmp(&poses[a].instance_score).then(a.cmp(&b)));
    let mut seeds: Vec<Option<SubPixel>> = vec![None; poses.len()];
    let mut taken: Vec<SubPixel> = Vec::new();
    for i in order {
        let mut best: Option<(SubPixel, usize)> = None;
        for k in poses[i].joints.iter().flatten() {
            if taken.iter().any(|t| t.distance(k.position) <= 2.0 * radius) {
                continue;
            }
            let s = index.support(emb, k.position, radius);
            if s > 0 && best.is_none_or(|(_, bs)| s > bs) {
                best = Some((k.position, s));
            }
        }
        if let Some((p, _)) = best {
            taken.push(p);
            seeds[i] = Some(p);
        }
    }
    Ok(seeds)
}

/// One decoded person: a pose, a mask, or both.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub pose: Option<PersonPose>,
    pub mask: Option<BinaryMask>,
    /// Cluster centroid of the mask.
    pub centroid: Option<SubPixel>,
    pub score: f64,
}

/// Greedy one-to-one pairing of pose anchors and mask centroids by ascending
/// distance. Unpaired poses and masks are kept as pose-only or mask-only
/// instances; mask-only instances are scored with their mean membership scaled
/// by one half. Empty masks are dropped.
pub fn pose_seg_unify(
    poses: &[PersonPose],
    anchors: &[Option<SubPixel>],
    masks: &[BinaryMask],
    centroids: &[SubPixel],
    probs: &DenseField,
) -> Result<Vec<Instance>> {
    if poses.len() != anchors.len() {
        return Err(shape_mismatch(poses.len(), anchors.len()));
    }
    if masks.len() != centroids.len() || masks.len() != probs.channels() {
        return Err(shape_mismatch(masks.len(), centroids.len()));
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, a) in anchors.iter().enumerate() {
        let Some(a) = a else { continue };
        for (k, c) in centroids.iter().enumerate() {
            if !masks[k].is_empty() {
                pairs.push((a.distance(*c), i, k));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pose_of_mask = vec![None; masks.len()];
    let mut mask_of_pose = vec![None; poses.len()];
    for (_, i, k) in pairs {
        if mask_of_pose[i].is_none() && pose_of_mask[k].is_none() {
            mask_of_pose[i] = Some(k);
            pose_of_mask[k] = Some(i);
        }
    }
    let mut out = Vec::new();
    for (i, pose) in poses.iter().enumerate() {
        let k = mask_of_pose[i];
        out.push(Instance {
            pose: Some(pose.clone()),
            mask: k.map(|k| masks[k].clone()),
            centroid: k.map(|k| centroids[k]),
            score: pose.instance_score,
        });
    }
    for (k, mask) in masks.iter().enumerate() {
        if pose_of_mask[k].is_some() || mask.is_empty() {
            continue;
        }
        let plane = probs.channel(k);
        let w = mask.width();
        let mean = mask.pixels().map(|p| plane[p.y as usize * w + p.x as usize] as f64).sum::<f64>()
            / mask.area() as f64;
        out.push(Instance {
            pose: None,
            mask: Some(mask.clone()),
            centroid: Some(centroids[k]),
            score: 0.5 * mean,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SegDecode {
    pub centroids: Vec<SubPixel>,
    pub probs: DenseField,
    pub masks: Vec<BinaryMask>,
    pub instances: Vec<Instance>,
    pub iterations: usize,
    pub converged: bool,
}

/// Full segmentation branch for one image.
///
/// Static mode discovers clusters from embedding density and pairs them with
/// poses through the mean of each pose's joints. Dynamic mode seeds one
/// cluster per pose, adds density clusters for leftover embeddings, and
/// iterates the centroid update.
pub fn decode_segmentation(
    offsets: &DenseField,
    foreground: &BinaryMask,
    poses: &[PersonPose],
    config: &SegConfig,
) -> Result<SegDecode> {
    config.validate()?;
    let emb = embed_pixels(offsets, foreground)?;
    let sigma = config.sigma_instance;
    let (centroids, anchors, iterations, converged) = match config.mode {
        CentroidMode::Static => {
            let cs = find_centroids(&emb, sigma, config.min_cluster_pixels, |_| true)?;
            let anchors: Vec<Option<SubPixel>> = poses.iter().map(|p| p.joint_mean()).collect();
            (cs, anchors, 0, true)
        }
        CentroidMode::Dynamic => {
            let anchors = seeds_from_poses(&emb, poses, sigma)?;
            let mut seeds: Vec<SubPixel> = anchors.iter().flatten().copied().collect();
            let r2 = assignment_radius(sigma).powi(2);
            let residual: Vec<bool> = emb.values.iter().map(|&e| nearest_within(e, &seeds, r2).is_none()).collect();
            seeds.extend(find_centroids(&emb, sigma, config.min_cluster_pixels, |i| residual[i])?);
            if seeds.is_empty() {
                (Vec::new(), anchors, 0, true)
            } else {
                let c = cluster_dynamic(&emb, &seeds, sigma, config.max_iters, config.tol)?;
                // Anchors follow their seed so pairing survives the updates.
                let mut moved = anchors.clone();
                for (k, a) in moved.iter_mut().filter(|a| a.is_some()).enumerate() {
                    *a = Some(c.centroids[k]);
                }
                (c.centroids, moved, c.iterations, c.converged)
            }
        }
    };
    if centroids.is_empty() {
        let instances = poses
            .iter()
            .map(|p| Instance {
                pose: Some(p.clone()),
                mask: None,
                centroid: None,
                score: p.instance_score,
            })
            .collect();
        return Ok(SegDecode {
            centroids,
            probs: DenseField::zeros(foreground.height(), foreground.width(), 0),
            masks: Vec::new(),
            instances,
            iterations,
            converged,
        });
    }
    let raw = membership(&emb, &centroids, sigma)?;
    let probs = igo_smooth(&raw, config.sigma_igo)?;
    let masks = finalize_masks(&probs);
    let instances = pose_seg_unify(poses, &anchors, &masks, &centroids, &probs)?;
    Ok(SegDecode {
        centroids,
        probs,
        masks,
        instances,
        iterations,
        converged,
    })
}
