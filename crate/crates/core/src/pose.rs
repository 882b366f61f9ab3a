//! Keypoint decoding: point-wise Gaussian smoothing, peak extraction,
//! KeyCentroid vote aggregation and greedy kinematic assembly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_mismatch, Result};
use crate::field::{check_radius, smooth_gaussian, DenseField, GridPoint, SubPixel};
use crate::skeleton::{Skeleton, VarianceClass, NUM_JOINTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseConfig {
    /// Keypoint disk radius in pixels.
    pub radius: f64,
    pub sigma_hvk: f64,
    pub sigma_lvk: f64,
    /// Minimum smoothed activation for peaks and voting pixels.
    pub threshold: f64,
    pub nms_radius: f64,
    /// Limb search radius; `None` means `2 * radius`.
    pub link_radius: Option<f64>,
    /// Mode-seeking window for vote aggregation; `None` means `max(radius / 4, 2)`.
    pub vote_window: Option<f64>,
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self {
            radius: 32.0,
            sigma_hvk: 0.3,
            sigma_lvk: 0.7,
            threshold: 0.5,
            nms_radius: 10.0,
            link_radius: None,
            vote_window: None,
        }
    }
}

impl PoseConfig {
    pub fn with_radius(radius: f64) -> Self {
        Self {
            radius,
            ..Self::default()
        }
    }

    pub fn link_radius(&self) -> f64 {
        self.link_radius.unwrap_or(2.0 * self.radius)
    }

    pub fn vote_window(&self) -> f64 {
        self.vote_window.unwrap_or((self.radius / 4.0).max(2.0))
    }

    pub fn validate(&self) -> Result<()> {
        check_radius(self.radius)?;
        check_pgo_sigmas(self.sigma_hvk, self.sigma_lvk)?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(invalid(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        check_radius(self.nms_radius)?;
        check_radius(self.link_radius())?;
        check_radius(self.vote_window())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointCandidate {
    pub joint: usize,
    pub position: GridPoint,
    pub raw_score: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinedKeypoint {
    pub joint: usize,
    pub position: SubPixel,
    pub confidence: f64,
    pub votes: usize,
    /// Candidate the refinement started from.
    pub source: GridPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonPose {
    pub joints: [Option<RefinedKeypoint>; NUM_JOINTS],
    pub instance_score: f64,
}

impl PersonPose {
    pub fn num_joints(&self) -> usize {
        self.joints.iter().flatten().count()
    }

    /// Highest-confidence joint, lowest joint index on ties.
    pub fn high_confidence_joint(&self) -> Option<&RefinedKeypoint> {
        self.joints.iter().flatten().fold(None, |best: Option<&RefinedKeypoint>, k| match best {
            Some(b) if b.confidence >= k.confidence => Some(b),
            _ => Some(k),
        })
    }

    /// Mean position of present joints.
    pub fn joint_mean(&self) -> Option<SubPixel> {
        let n = self.num_joints();
        (n > 0).then(|| {
            let (sx, sy) = self
                .joints
                .iter()
                .flatten()
                .fold((0.0, 0.0), |(x, y), k| (x + k.position.x, y + k.position.y));
            SubPixel::new(sx / n as f64, sy / n as f64)
        })
    }

    pub fn positions(&self) -> [Option<SubPixel>; NUM_JOINTS] {
        self.joints.map(|j| j.map(|k| k.position))
    }
}

fn check_pgo_sigmas(sigma_hvk: f64, sigma_lvk: f64) -> Result<()> {
    if !(0.1..0.5).contains(&sigma_hvk) {
        return Err(invalid(format!("sigma_hvk must lie in [0.1, 0.5), got {sigma_hvk}")));
    }
    if !(0.5..1.0).contains(&sigma_lvk) {
        return Err(invalid(format!("sigma_lvk must lie in [0.5, 1), got {sigma_lvk}")));
    }
    Ok(())
}

/// Smooths each joint channel with the σ of its variance class.
pub fn pgo_smooth(heatmaps: &DenseField, skeleton: &Skeleton, sigma_hvk: f64, sigma_lvk: f64) -> Result<DenseField> {
    check_pgo_sigmas(sigma_hvk, sigma_lvk)?;
    if heatmaps.channels() != NUM_JOINTS {
        return Err(shape_mismatch(format!("{NUM_JOINTS} channels"), heatmaps.channels()));
    }
    let sigmas: Vec<f64> = (0..NUM_JOINTS)
        .map(|j| match skeleton.variance_class(j) {
            VarianceClass::High => sigma_hvk,
            VarianceClass::Low => sigma_lvk,
        })
        .collect();
    smooth_gaussian(heatmaps, &sigmas)
}

/// Local maxima at or above `threshold`, suppressed per joint within `nms_radius`,
/// sorted by descending score (then joint, row, column).
pub fn extract_candidates(heatmaps: &DenseField, threshold: f64, nms_radius: f64) -> Result<Vec<KeypointCandidate>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    check_radius(nms_radius)?;
    let per_channel: Vec<Vec<KeypointCandidate>> = (0..heatmaps.channels())
        .into_par_iter()
        .map(|c| {
            let mut peaks = channel_peaks(heatmaps, c, threshold as f32);
            // Peaks arrive in row-major order, so a stable score sort matches the full key.
            peaks.sort_by(|a, b| b.raw_score.total_cmp(&a.raw_score));
            suppress_sorted(peaks, nms_radius, heatmaps.width(), heatmaps.height())
        })
        .collect();
    let mut all: Vec<KeypointCandidate> = per_channel.into_iter().flatten().collect();
    all.sort_unstable_by(candidate_order);
    Ok(all)
}

fn candidate_order(a: &KeypointCandidate, b: &KeypointCandidate) -> std::cmp::Ordering {
    b.raw_score
        .total_cmp(&a.raw_score)
        .then(a.joint.cmp(&b.joint))
        .then(a.position.y.cmp(&b.position.y))
        .then(a.position.x.cmp(&b.position.x))
}

fn channel_peaks(field: &DenseField, c: usize, threshold: f32) -> Vec<KeypointCandidate> {
    let (h, w) = (field.height(), field.width());
    let plane = field.channel(c);
    let mut out = Vec::new();
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for (x, &v) in row.iter().enumerate() {
            if v < threshold {
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
                out.push(KeypointCandidate {
                    joint: c,
                    position: GridPoint::new(x as i32, y as i32),
                    raw_score: v,
                });
            }
        }
    }
    out
}

/// Greedy same-joint suppression: a candidate within `radius` of a kept one is dropped.
pub fn nms(mut candidates: Vec<KeypointCandidate>, radius: f64, width: usize, height: usize) -> Vec<KeypointCandidate> {
    candidates.sort_unstable_by(candidate_order);
    suppress_sorted(candidates, radius, width, height)
}

fn suppress_sorted(candidates: Vec<KeypointCandidate>, radius: f64, width: usize, height: usize) -> Vec<KeypointCandidate> {
    let r = radius.floor() as i64;
    let r2 = radius * radius;
    let mut blocked_joint: Vec<Vec<bool>> = Vec::new();
    let mut kept = Vec::new();
    for cand in candidates {
        if blocked_joint.len() <= cand.joint {
            blocked_joint.resize(cand.joint + 1, Vec::new());
        }
        let grid = &mut blocked_joint[cand.joint];
        if grid.is_empty() {
            grid.resize(width * height, false);
        }
        let (cx, cy) = (cand.position.x as i64, cand.position.y as i64);
        if cx < 0 || cy < 0 || cx >= width as i64 || cy >= height as i64 {
            continue;
        }
        if grid[cy as usize * width + cx as usize] {
            continue;
        }
        for y in (cy - r).max(0)..=(cy + r).min(height as i64 - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(width as i64 - 1) {
                let d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) as f64;
                if d2 <= r2 {
                    grid[y as usize * width + x as usize] = true;
                }
            }
        }
        kept.push(cand);
    }
    kept
}

/// Votes cast by the active pixels of one joint inside a candidate's disk.
#[derive(Default)]
pub struct Votes {
    x: Vec<f64>,
    y: Vec<f64>,
    a: Vec<f64>,
    len: usize,
}

impl Votes {
    /// Refills the buffers; returns the total vote mass.
    #[allow(clippy::too_many_arguments)]
    fn gather(
        &mut self,
        plane: &[f32],
        dxs: &[f32],
        dys: &[f32],
        (h, w): (i64, i64),
        center: GridPoint,
        radius: f64,
        threshold: f32,
    ) -> f64 {
        let (cx, cy) = (center.x as i64, center.y as i64);
        let ri = radius.floor() as i64;
        let r2 = radius * radius;
        let (y0, y1) = ((cy - ri).max(0), (cy + ri).min(h - 1));
        let cap = ((2 * ri + 1) * (2 * ri + 1)).max(0) as usize;
        if self.x.len() < cap {
            self.x.resize(cap, 0.0);
            self.y.resize(cap, 0.0);
            self.a.resize(cap, 0.0);
        }
        let mut n = 0usize;
        let mut total = 0.0f64;
        for y in y0..=y1 {
            let dy = (y - cy) as f64;
            let span = (r2 - dy * dy).max(0.0).sqrt().floor() as i64;
            let (x0, x1) = ((cx - span).max(0), (cx + span).min(w - 1));
            if x0 > x1 {
                continue;
            }
            let row = (y * w) as usize;
            let (lo, hi) = (row + x0 as usize, row + x1 as usize);
            for (k, ((&act, &dx), &dyv)) in plane[lo..=hi].iter().zip(&dxs[lo..=hi]).zip(&dys[lo..=hi]).enumerate() {
                let vx = (x0 + k as i64) as f64 + dx as f64;
                let vy = y as f64 + dyv as f64;
                let (ex, ey) = (vx - cx as f64, vy - cy as f64);
                let keep = act >= threshold && ex * ex + ey * ey <= r2;
                self.x[n] = vx;
                self.y[n] = vy;
                self.a[n] = act as f64;
                total += f64::from(u8::from(keep)) * act as f64;
                n += usize::from(keep);
            }
        }
        self.len = n;
        total
    }

    fn len(&self) -> usize {
        self.len
    }

    /// Weighted sums `(Σa·x, Σa·y, Σa, count)` over votes within `sqrt(r2)` of `at`.
    fn window_sums(&self, at: SubPixel, r2: f64) -> (f64, f64, f64, usize) {
        const L: usize = 4;
        let (mut sx, mut sy, mut sw, mut sn) = ([0.0f64; L], [0.0f64; L], [0.0f64; L], [0.0f64; L]);
        let (xs, ys, as_) = (&self.x[..self.len], &self.y[..self.len], &self.a[..self.len]);
        let n = self.len / L * L;
        for i in (0..n).step_by(L) {
            for l in 0..L {
                let (x, y, a) = (xs[i + l], ys[i + l], as_[i + l]);
                let (ex, ey) = (x - at.x, y - at.y);
                let m = f64::from(u8::from(ex * ex + ey * ey <= r2));
                sx[l] += m * a * x;
                sy[l] += m * a * y;
                sw[l] += m * a;
                sn[l] += m;
            }
        }
        let (mut tx, mut ty, mut tw, mut tn) = (sx.iter().sum::<f64>(), sy.iter().sum::<f64>(), sw.iter().sum::<f64>(), sn.iter().sum::<f64>());
        for i in n..self.len {
            let (x, y, a) = (xs[i], ys[i], as_[i]);
            let (ex, ey) = (x - at.x, y - at.y);
            if ex * ex + ey * ey <= r2 {
                tx += a * x;
                ty += a * y;
                tw += a;
                tn += 1.0;
            }
        }
        (tx, ty, tw, tn as usize)
    }
}

/// One pass over the disk: window sums around `at` plus the total vote mass,
/// without materializing the votes. Coordinates are taken relative to the
/// candidate in `f32` so the row loop vectorizes.
#[allow(clippy::too_many_arguments)]
fn scan_window(
    plane: &[f32],
    dxs: &[f32],
    dys: &[f32],
    (h, w): (i64, i64),
    center: GridPoint,
    radius: f64,
    threshold: f32,
    at: SubPixel,
    window2: f64,
) -> ((f64, f64, f64, usize), f64) {
    const L: usize = 8;
    let (cx, cy) = (center.x as i64, center.y as i64);
    let ri = radius.floor() as i64;
    let r2 = radius * radius;
    let (r2f, w2f) = (r2 as f32, window2 as f32);
    let (ax, ay) = ((at.x - cx as f64) as f32, (at.y - cy as f64) as f32);
    let lanes: [f32; L] = std::array::from_fn(|l| l as f32);
    let (mut tx, mut ty, mut tw, mut tn, mut tt) = (0.0f64, 0.0f64, 0.0f64, 0usize, 0.0f64);
    for y in (cy - ri).max(0)..=(cy + ri).min(h - 1) {
        let dy = (y - cy) as f64;
        let span = (r2 - dy * dy).max(0.0).sqrt().floor() as i64;
        let (x0, x1) = ((cx - span).max(0), (cx + span).min(w - 1));
        if x0 > x1 {
            continue;
        }
        let row = (y * w) as usize;
        let (lo, hi) = (row + x0 as usize, row + x1 as usize + 1);
        let (acts, ddx, ddy) = (&plane[lo..hi], &dxs[lo..hi], &dys[lo..hi]);
        let yrel = dy as f32;
        let xrel0 = (x0 - cx) as f32;
        let (mut st, mut sx, mut sy, mut sw, mut sn) = ([0.0f32; L], [0.0f32; L], [0.0f32; L], [0.0f32; L], [0.0f32; L]);
        let mut lane = |l: usize, rx: f32, ry: f32, act: f32| {
            let keep = if act >= threshold && rx * rx + ry * ry <= r2f { act } else { 0.0 };
            let (wx, wy) = (rx - ax, ry - ay);
            let inw = if wx * wx + wy * wy <= w2f { keep } else { 0.0 };
            st[l] += keep;
            sx[l] += inw * rx;
            sy[l] += inw * ry;
            sw[l] += inw;
            sn[l] += if inw > 0.0 { 1.0 } else { 0.0 };
        };
        let chunks = acts.len() / L;
        for ch in 0..chunks {
            let k = ch * L;
            let a8: &[f32; L] = acts[k..k + L].try_into().expect("chunk");
            let x8: &[f32; L] = ddx[k..k + L].try_into().expect("chunk");
            let y8: &[f32; L] = ddy[k..k + L].try_into().expect("chunk");
            let xb = xrel0 + k as f32;
            for l in 0..L {
                lane(l, xb + lanes[l] + x8[l], yrel + y8[l], a8[l]);
            }
        }
        for k in chunks * L..acts.len() {
            lane(k % L, xrel0 + k as f32 + ddx[k], yrel + ddy[k], acts[k]);
        }
        let sum = |v: [f32; L]| v.iter().map(|&x| x as f64).sum::<f64>();
        tt += sum(st);
        tx += sum(sx);
        ty += sum(sy);
        tw += sum(sw);
        tn += sum(sn) as usize;
    }
    // Back to absolute coordinates: Σa·(c + r) = c·Σa + Σa·r.
    ((tx + cx as f64 * tw, ty + cy as f64 * tw, tw, tn), tt)
}

/// Aggregates KeyCentroid votes around a candidate into a sub-pixel keypoint.
///
/// Every pixel inside the candidate's disk with smoothed activation at or above
/// the threshold votes for `p + k(p)`; votes landing outside the disk are
/// dropped. Starting from the candidate's own vote, the estimate moves to the
/// activation-weighted mean of the votes inside the mode-seeking window until
/// it settles. Confidence is the activation-weighted share of votes inside the
/// final window times the smoothed heatmap at the estimate.
pub fn refine_keypoint(
    candidate: &KeypointCandidate,
    displacements: &DenseField,
    smoothed: &DenseField,
    config: &PoseConfig,
) -> RefinedKeypoint {
    refine_with(&mut Votes::default(), candidate, displacements, smoothed, config)
}

/// [`refine_keypoint`] with caller-owned scratch buffers.
pub fn refine_with(
    votes: &mut Votes,
    candidate: &KeypointCandidate,
    displacements: &DenseField,
    smoothed: &DenseField,
    config: &PoseConfig,
) -> RefinedKeypoint {
    let j = candidate.joint;
    let c = candidate.position;
    let (h, w) = (smoothed.height() as i64, smoothed.width() as i64);
    let (dxs, dys) = (displacements.channel(2 * j), displacements.channel(2 * j + 1));
    let plane = smoothed.channel(j);
    let fallback = RefinedKeypoint {
        joint: j,
        position: c.to_subpixel(),
        confidence: (candidate.raw_score as f64).clamp(0.0, 1.0),
        votes: 1,
        source: c,
    };
    let (cx, cy) = (c.x as i64, c.y as i64);
    let threshold = config.threshold as f32;
    let r2 = config.radius * config.radius;
    let window2 = config.vote_window().powi(2);
    let own = (cx >= 0 && cy >= 0 && cx < w && cy < h)
        .then(|| {
            let i = (cy * w + cx) as usize;
            let v = SubPixel::new(cx as f64 + dxs[i] as f64, cy as f64 + dys[i] as f64);
            (plane[i] >= threshold && v.distance_sq(c.to_subpixel()) <= r2).then_some(v)
        })
        .flatten();

    let mut inliers = (0usize, 0.0f64);
    let mut estimate;
    let total;
    let mut settled = false;
    match own {
        Some(start) => {
            let ((sx, sy, sw, n), t) = scan_window(plane, dxs, dys, (h, w), c, config.radius, threshold, start, window2);
            total = t;
            estimate = start;
            if sw > 0.0 {
                inliers = (n, sw);
                let next = SubPixel::new(sx / sw, sy / sw);
                settled = next.distance(start) < 1e-4;
                estimate = next;
            } else {
                settled = true;
            }
        }
        None => {
            total = votes.gather(plane, dxs, dys, (h, w), c, config.radius, threshold);
            if votes.len() == 0 {
                return fallback;
            }
            let (sx, sy, sw, _) = votes.window_sums(c.to_subpixel(), f64::INFINITY);
            estimate = SubPixel::new(sx / sw, sy / sw);
        }
    }
    if !settled {
        if own.is_some() {
            votes.gather(plane, dxs, dys, (h, w), c, config.radius, threshold);
        }
        for _ in 0..20 {
            let (sx, sy, sw, n) = votes.window_sums(estimate, window2);
            if sw <= 0.0 {
                break;
            }
            inliers = (n, sw);
            let next = SubPixel::new(sx / sw, sy / sw);
            let shift = next.distance(estimate);
            estimate = next;
            if shift < 1e-4 {
                break;
            }
        }
    }
    if inliers.0 == 0 {
        return fallback;
    }
    let confidence = (inliers.1 / total * smoothed.sample_bilinear(j, estimate) as f64).clamp(0.0, 1.0);
    RefinedKeypoint {
        joint: j,
        position: estimate,
        confidence,
        votes: inliers.0,
        source: c,
    }
}

/// Greedy kinematic assembly.
///
/// The highest-confidence unused keypoint seeds an instance; skeleton edges are
/// then walked breadth-first, attaching the nearest unused keypoint of each
/// adjacent joint within `link_radius` (scaled by the hop count when an
/// intermediate joint is missing). Keypoints within `dedup_radius` of a
/// claimed keypoint of the same joint are dropped as duplicates.
pub fn assemble_poses(
    refined: &[RefinedKeypoint],
    skeleton: &Skeleton,
    link_radius: f64,
    dedup_radius: f64,
    seed_threshold: f64,
) -> Vec<PersonPose> {
    let mut order: Vec<usize> = (0..refined.len()).collect();
    order.sort_by(|&a, &b| {
        let (ka, kb) = (&refined[a], &refined[b]);
        kb.confidence
            .total_cmp(&ka.confidence)
            .then(ka.joint.cmp(&kb.joint))
            .then(ka.position.y.total_cmp(&kb.position.y))
            .then(ka.position.x.total_cmp(&kb.position.x))
            .then(a.cmp(&b))
    });
    let mut by_joint: Vec<Vec<usize>> = vec![Vec::new(); NUM_JOINTS];
    for &i in &order {
        by_joint[refined[i].joint].push(i);
    }
    let mut used = vec![false; refined.len()];
    let mut claimed: Vec<Vec<SubPixel>> = vec![Vec::new(); NUM_JOINTS];
    let dedup2 = dedup_radius * dedup_radius;
    let is_dup = |k: &RefinedKeypoint, claimed: &Vec<Vec<SubPixel>>| {
        claimed[k.joint].iter().any(|c| c.distance_sq(k.position) <= dedup2)
    };

    let mut poses = Vec::new();
    for &seed in &order {
        if used[seed] {
            continue;
        }
        used[seed] = true;
        let kp = refined[seed];
        if kp.confidence < seed_threshold || is_dup(&kp, &claimed) {
            continue;
        }
        let mut joints: [Option<RefinedKeypoint>; NUM_JOINTS] = [None; NUM_JOINTS];
        joints[kp.joint] = Some(kp);
        claimed[kp.joint].push(kp.position);
        // Nearest present ancestor and hop count for each visited joint.
        let mut anchor: [Option<(SubPixel, usize)>; NUM_JOINTS] = [None; NUM_JOINTS];
        anchor[kp.joint] = Some((kp.position, 0));
        for (parent, child) in skeleton.bfs_edges(kp.joint) {
            let Some((from, hops)) = anchor[parent] else {
                continue;
            };
            let hops = hops + 1;
            let limit2 = (link_radius * hops as f64).powi(2);
            let mut best: Option<(usize, f64)> = None;
            for &i in &by_joint[child] {
                if used[i] || is_dup(&refined[i], &claimed) {
                    continue;
                }
                let d2 = refined[i].position.distance_sq(from);
                if d2 <= limit2 && best.is_none_or(|(_, bd)| d2 < bd) {
                    best = Some((i, d2));
                }
            }
            match best {
                Some((i, _)) => {
                    used[i] = true;
                    joints[child] = Some(refined[i]);
                    claimed[child].push(refined[i].position);
                    anchor[child] = Some((refined[i].position, 0));
                }
                None => anchor[child] = Some((from, hops)),
            }
        }
        let present: Vec<f64> = joints.iter().flatten().map(|k| k.confidence).collect();
        let instance_score = present.iter().sum::<f64>() / present.len() as f64;
        poses.push(PersonPose {
            joints,
            instance_score,
        });
    }
    poses
}

/// Intermediate and final products of pose decoding.
#[derive(Debug, Clone)]
pub struct PoseDecode {
    pub smoothed: DenseField,
    pub candidates: Vec<KeypointCandidate>,
    pub refined: Vec<RefinedKeypoint>,
    pub poses: Vec<PersonPose>,
}

/// Full pose branch: smoothing, candidates, refinement and assembly.
pub fn decode_poses(
    heatmaps: &DenseField,
    displacements: &DenseField,
    skeleton: &Skeleton,
    config: &PoseConfig,
) -> Result<PoseDecode> {
    config.validate()?;
    if displacements.channels() != 2 * NUM_JOINTS
        || displacements.height() != heatmaps.height()
        || displacements.width() != heatmaps.width()
    {
        return Err(shape_mismatch(
            format!("{}x{}x{}", heatmaps.height(), heatmaps.width(), 2 * NUM_JOINTS),
            displacements.shape_string(),
        ));
    }
    let smoothed = pgo_smooth(heatmaps, skeleton, config.sigma_hvk, config.sigma_lvk)?;
    let candidates = extract_candidates(&smoothed, config.threshold, config.nms_radius)?;
    let refined: Vec<RefinedKeypoint> = candidates
        .par_iter()
        .map_init(Votes::default, |votes, c| refine_with(votes, c, displacements, &smoothed, config))
        .collect();
    let poses = assemble_poses(&refined, skeleton, config.link_radius(), config.radius, config.threshold);
    Ok(PoseDecode {
        smoothed,
        candidates,
        refined,
        poses,
    })
}
