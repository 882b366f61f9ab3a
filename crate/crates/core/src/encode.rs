//! Ground-truth target fields: disk heatmaps, KeyCentroid displacements,
//! response maps, embedding offsets and instance centroids.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, KdcError, Result};
use crate::field::{check_radius, BinaryMask, DenseField, GridPoint, SubPixel};
use crate::scene::Scene;
use crate::skeleton::NUM_JOINTS;

/// Default disk radius in pixels.
pub const DEFAULT_RADIUS: f64 = 32.0;
/// Default per-instance membership margin in pixels.
pub const DEFAULT_SIGMA_INSTANCE: f64 = 5.0;

/// Centroids are snapped to this grid so `pixel + offset` reproduces them exactly in `f32`.
const CENTROID_QUANTUM: f64 = 1.0 / 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CentroidMode {
    Static,
    Dynamic,
}

impl std::fmt::Display for CentroidMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CentroidMode::Static => "static",
            CentroidMode::Dynamic => "dynamic",
        })
    }
}

impl std::str::FromStr for CentroidMode {
    type Err = KdcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(CentroidMode::Static),
            "dynamic" => Ok(CentroidMode::Dynamic),
            other => Err(invalid(format!("unknown centroid mode {other:?}"))),
        }
    }
}

/// Per-joint displacement targets inside each keypoint disk.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyCentroidField {
    /// `2 * NUM_JOINTS` channels: `dx` at `2j`, `dy` at `2j + 1`.
    pub base: DenseField,
    /// Pixels inside some disk of joint `j`.
    pub valid: Vec<BinaryMask>,
    /// Gaussian response around the nearest keypoint, one channel per joint.
    pub response: DenseField,
    pub radius: f64,
}

impl KeyCentroidField {
    pub fn displacement(&self, joint: usize, x: usize, y: usize) -> (f32, f32) {
        (self.base.get(2 * joint, x, y), self.base.get(2 * joint + 1, x, y))
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().map(BinaryMask::area).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskCentroid {
    pub instance_id: u32,
    pub centroid: SubPixel,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskCentroidSet {
    pub mode: CentroidMode,
    pub centroids: Vec<MaskCentroid>,
}

/// Two-channel embedding offsets; zero on background.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    pub field: DenseField,
    pub foreground: BinaryMask,
}

impl OffsetField {
    pub fn new(field: DenseField, foreground: BinaryMask) -> Result<Self> {
        if field.channels() != 2
            || field.height() != foreground.height()
            || field.width() != foreground.width()
        {
            return Err(crate::error::shape_mismatch(
                format!("{}x{}x2", foreground.height(), foreground.width()),
                field.shape_string(),
            ));
        }
        Ok(Self { field, foreground })
    }

    pub fn offset(&self, x: usize, y: usize) -> (f32, f32) {
        (self.field.get(0, x, y), self.field.get(1, x, y))
    }
}

/// Binary disk heatmaps, one channel per joint.
pub fn encode_heatmaps(scene: &Scene, radius: f64) -> Result<DenseField> {
    check_radius(radius)?;
    let mut out = DenseField::zeros(scene.height, scene.width, NUM_JOINTS);
    for person in &scene.persons {
        for j in 0..NUM_JOINTS {
            if !person.visible[j] {
                continue;
            }
            for_each_disk_pixel(scene, person.keypoints[j], radius, |x, y| out.set(j, x, y, 1.0));
        }
    }
    Ok(out)
}

/// Displacements `q - p` toward the nearest same-joint keypoint inside every disk.
///
/// Overlapping disks resolve to the nearest keypoint with ties going to the
/// lower instance. The response map uses `σ = R / 3`.
pub fn encode_keycentroid(scene: &Scene, radius: f64) -> Result<KeyCentroidField> {
    check_radius(radius)?;
    let (h, w) = (scene.height, scene.width);
    let mut base = DenseField::zeros(h, w, 2 * NUM_JOINTS);
    let mut response = DenseField::zeros(h, w, NUM_JOINTS);
    let mut valid = Vec::with_capacity(NUM_JOINTS);
    let sigma = radius / 3.0;
    let r2 = radius * radius;
    for j in 0..NUM_JOINTS {
        let points: Vec<SubPixel> = scene
            .persons
            .iter()
            .filter(|p| p.visible[j])
            .map(|p| p.keypoints[j])
            .collect();
        let mut mask = BinaryMask::new(h, w);
        if points.is_empty() {
            valid.push(mask);
            continue;
        }
        for y in 0..h {
            for x in 0..w {
                let p = SubPixel::new(x as f64, y as f64);
                let (mut best, mut best_d2) = (points[0], p.distance_sq(points[0]));
                for &q in &points[1..] {
                    let d2 = p.distance_sq(q);
                    if d2 < best_d2 {
                        best = q;
                        best_d2 = d2;
                    }
                }
                response.set(j, x, y, (-best_d2 / (2.0 * sigma * sigma)).exp() as f32);
                if best_d2 <= r2 {
                    mask.set(x, y, true);
                    base.set(2 * j, x, y, (best.x - p.x) as f32);
                    base.set(2 * j + 1, x, y, (best.y - p.y) as f32);
                }
            }
        }
        valid.push(mask);
    }
    Ok(KeyCentroidField {
        base,
        valid,
        response,
        radius,
    })
}

/// Instance centroids and the offsets `v = C - m` pointing every foreground pixel at its centroid.
///
/// Static centroids are mask pixel means. Dynamic centroids are the visible
/// keypoint nearest the mask mean, falling back to the mean when no keypoint
/// is visible.
pub fn encode_offsets(
    scene: &Scene,
    mode: CentroidMode,
    sigma_instance: f64,
) -> Result<(OffsetField, MaskCentroidSet)> {
    if scene.persons.is_empty() {
        return Err(KdcError::Empty("scene has no persons".into()));
    }
    if !(sigma_instance > 0.0 && sigma_instance.is_finite()) {
        return Err(invalid(format!("sigma_instance must be positive, got {sigma_instance}")));
    }
    let (h, w) = (scene.height, scene.width);
    let mut field = DenseField::zeros(h, w, 2);
    let mut foreground = BinaryMask::new(h, w);
    let mut centroids = Vec::with_capacity(scene.persons.len());
    for person in &scene.persons {
        let mean = person.mask.centroid().ok_or_else(|| {
            KdcError::Empty(format!("instance {} has an empty mask", person.instance_id))
        })?;
        let raw = match mode {
            CentroidMode::Static => mean,
            CentroidMode::Dynamic => (0..NUM_JOINTS)
                .filter(|&j| person.visible[j])
                .map(|j| person.keypoints[j])
                .min_by(|a, b| a.distance_sq(mean).total_cmp(&b.distance_sq(mean)))
                .unwrap_or(mean),
        };
        let c = quantize(raw);
        for p in person.mask.pixels() {
            let (x, y) = (p.x as usize, p.y as usize);
            foreground.set(x, y, true);
            field.set(0, x, y, (c.x - p.x as f64) as f32);
            field.set(1, x, y, (c.y - p.y as f64) as f32);
        }
        centroids.push(MaskCentroid {
            instance_id: person.instance_id,
            centroid: c,
            sigma: sigma_instance,
        });
    }
    Ok((
        OffsetField { field, foreground },
        MaskCentroidSet { mode, centroids },
    ))
}

fn quantize(p: SubPixel) -> SubPixel {
    SubPixel::new(
        (p.x / CENTROID_QUANTUM).round() * CENTROID_QUANTUM,
        (p.y / CENTROID_QUANTUM).round() * CENTROID_QUANTUM,
    )
}

/// Trainable-pixel mask: `false` on pixels owned by persons flagged `ignore`.
pub fn exclusion_mask(scene: &Scene) -> BinaryMask {
    let mut keep = BinaryMask::filled(scene.height, scene.width, true);
    for person in scene.persons.iter().filter(|p| p.ignore) {
        for p in person.mask.pixels() {
            keep.set(p.x as usize, p.y as usize, false);
        }
    }
    keep
}

/// Every target the decoders consume, for one scene.
#[derive(Debug, Clone)]
pub struct EncodedScene {
    pub heatmaps: DenseField,
    pub keycentroid: KeyCentroidField,
    pub foreground: BinaryMask,
    pub offsets_static: OffsetField,
    pub offsets_dynamic: OffsetField,
    pub centroids_static: MaskCentroidSet,
    pub centroids_dynamic: MaskCentroidSet,
    pub exclusion: BinaryMask,
}

impl EncodedScene {
    pub fn offsets(&self, mode: CentroidMode) -> &OffsetField {
        match mode {
            CentroidMode::Static => &self.offsets_static,
            CentroidMode::Dynamic => &self.offsets_dynamic,
        }
    }

    pub fn centroids(&self, mode: CentroidMode) -> &MaskCentroidSet {
        match mode {
            CentroidMode::Static => &self.centroids_static,
            CentroidMode::Dynamic => &self.centroids_dynamic,
        }
    }
}

pub fn encode_scene(scene: &Scene, radius: f64, sigma_instance: f64) -> Result<EncodedScene> {
    let heatmaps = encode_heatmaps(scene, radius)?;
    let keycentroid = encode_keycentroid(scene, radius)?;
    let (offsets_static, centroids_static) = encode_offsets(scene, CentroidMode::Static, sigma_instance)?;
    let (offsets_dynamic, centroids_dynamic) =
        encode_offsets(scene, CentroidMode::Dynamic, sigma_instance)?;
    Ok(EncodedScene {
        heatmaps,
        keycentroid,
        foreground: offsets_static.foreground.clone(),
        offsets_static,
        offsets_dynamic,
        centroids_static,
        centroids_dynamic,
        exclusion: exclusion_mask(scene),
    })
}

fn for_each_disk_pixel(scene: &Scene, q: SubPixel, radius: f64, mut f: impl FnMut(usize, usize)) {
    let x0 = (q.x - radius).floor().max(0.0) as i64;
    let y0 = (q.y - radius).floor().max(0.0) as i64;
    let x1 = ((q.x + radius).ceil() as i64).min(scene.width as i64 - 1);
    let y1 = ((q.y + radius).ceil() as i64).min(scene.height as i64 - 1);
    let r2 = radius * radius;
    for y in y0..=y1 {
        for x in x0..=x1 {
            if GridPoint::new(x as i32, y as i32).to_subpixel().distance_sq(q) <= r2 {
                f(x as usize, y as usize);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, occlude_scene, PersonGT};

    fn blank_person(id: u32, h: usize, w: usize) -> PersonGT {
        PersonGT {
            instance_id: id,
            keypoints: [SubPixel::default(); NUM_JOINTS],
            visible: [false; NUM_JOINTS],
            mask: BinaryMask::new(h, w),
            body: BinaryMask::new(h, w),
            ignore: false,
            occlusion: 0.0,
        }
    }

    fn scene_of(h: usize, w: usize, persons: Vec<PersonGT>) -> Scene {
        Scene {
            height: h,
            width: w,
            persons,
        }
    }

    /// Brute-force count of integer points within `r` of `q`.
    fn lattice_count(q: SubPixel, r: f64) -> usize {
        let mut n = 0;
        let span = r.ceil() as i64 + 1;
        for dy in -span..=span {
            for dx in -span..=span {
                let (x, y) = (q.x.floor() as i64 + dx, q.y.floor() as i64 + dy);
                if ((x as f64 - q.x).powi(2) + (y as f64 - q.y).powi(2)).sqrt() <= r {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn nose_disk_pixel_count() {
        let mut p = blank_person(0, 128, 128);
        p.keypoints[0] = SubPixel::new(64.0, 64.0);
        p.visible[0] = true;
        let s = scene_of(128, 128, vec![p]);
        let hm = encode_heatmaps(&s, 32.0).unwrap();
        assert_eq!(lattice_count(SubPixel::new(64.0, 64.0), 32.0), 3209);
        assert_eq!(hm.channel_sum(0), 3209.0);
        assert_eq!(hm.channel_sum(1), 0.0);
    }

    #[test]
    fn unit_radius_marks_at_most_five() {
        let s = generate_scene(1, (128, 128), 3).unwrap();
        let hm = encode_heatmaps(&s, 1.0).unwrap();
        for j in 0..NUM_JOINTS {
            let n = hm.channel_sum(j) as usize;
            assert!((1..=5).contains(&n), "joint {j}: {n}");
            assert_eq!(n, lattice_count(s.persons[0].keypoints[j], 1.0));
        }
        assert!(hm.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn invisible_person_encodes_nothing() {
        let s = scene_of(64, 64, vec![blank_person(0, 64, 64)]);
        let hm = encode_heatmaps(&s, 8.0).unwrap();
        assert!(hm.data().iter().all(|&v| v == 0.0));
        assert!(encode_heatmaps(&s, 0.0).is_err());
    }

    #[test]
    fn keycentroid_examples() {
        let mut p = blank_person(0, 32, 32);
        p.keypoints[3] = SubPixel::new(10.0, 10.0);
        p.visible[3] = true;
        let s = scene_of(32, 32, vec![p]);
        let kc = encode_keycentroid(&s, 32.0).unwrap();
        assert_eq!(kc.displacement(3, 10, 10), (0.0, 0.0));
        assert_eq!(kc.response.get(3, 10, 10), 1.0);
        assert_eq!(kc.displacement(3, 3, 4), (7.0, 6.0));
        assert!(kc.valid[3].get(3, 4));
        assert!(!kc.valid[2].get(3, 4));
    }

    #[test]
    fn overlapping_disks_point_to_nearest() {
        let knee = crate::skeleton::joint::RIGHT_KNEE;
        let mut a = blank_person(0, 64, 64);
        let mut b = blank_person(1, 64, 64);
        a.keypoints[knee] = SubPixel::new(20.0, 30.0);
        b.keypoints[knee] = SubPixel::new(40.0, 30.0);
        a.visible[knee] = true;
        b.visible[knee] = true;
        let s = scene_of(64, 64, vec![a, b]);
        let kc = encode_keycentroid(&s, 32.0).unwrap();
        // Oracle: nearest keypoint by exhaustive search, ties to the lower id.
        for (x, y) in [(30usize, 30usize), (29, 30), (31, 30), (30, 10), (5, 50)] {
            let p = SubPixel::new(x as f64, y as f64);
            let qa = SubPixel::new(20.0, 30.0);
            let qb = SubPixel::new(40.0, 30.0);
            let q = if p.distance_sq(qb) < p.distance_sq(qa) { qb } else { qa };
            let (dx, dy) = kc.displacement(knee, x, y);
            assert_eq!((dx as f64, dy as f64), (q.x - p.x, q.y - p.y), "pixel ({x},{y})");
        }
        // Midpoint tie goes to instance 0.
        assert_eq!(kc.displacement(knee, 30, 30), (-10.0, 0.0));
    }

    #[test]
    fn keycentroid_magnitude_bounded_by_radius() {
        let s = generate_scene(3, (200, 200), 9).unwrap();
        let kc = encode_keycentroid(&s, 12.0).unwrap();
        for j in 0..NUM_JOINTS {
            for y in 0..200 {
                for x in 0..200 {
                    let (dx, dy) = kc.displacement(j, x, y);
                    if kc.valid[j].get(x, y) {
                        assert!(((dx * dx + dy * dy) as f64).sqrt() <= 12.0 + 1e-4);
                    } else {
                        assert_eq!((dx, dy), (0.0, 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn response_peaks_at_keypoint_pixels() {
        let s = generate_scene(1, (128, 128), 2).unwrap();
        let kc = encode_keycentroid(&s, 32.0).unwrap();
        for j in 0..NUM_JOINTS {
            let q = s.persons[0].keypoints[j];
            let arg = kc.response.argmax(j).to_subpixel();
            assert!((arg.x - q.x).abs() <= 0.5 && (arg.y - q.y).abs() <= 0.5);
        }
        // Rim value for σ = R/3.
        let rim = (-(32.0f64 * 32.0) / (2.0 * (32.0 / 3.0f64).powi(2))).exp();
        assert!((rim - 0.011109).abs() < 1e-6);
    }

    #[test]
    fn single_pixel_and_rectangle_centroids() {
        let mut p = blank_person(0, 40, 40);
        p.mask.set(5, 5, true);
        let s = scene_of(40, 40, vec![p]);
        let (off, cs) = encode_offsets(&s, CentroidMode::Static, 5.0).unwrap();
        assert_eq!(cs.centroids[0].centroid, SubPixel::new(5.0, 5.0));
        assert_eq!(off.offset(5, 5), (0.0, 0.0));

        let mut p = blank_person(0, 40, 40);
        for y in 10..30 {
            for x in 3..13 {
                p.mask.set(x, y, true);
            }
        }
        let s = scene_of(40, 40, vec![p]);
        let (_, cs) = encode_offsets(&s, CentroidMode::Static, 5.0).unwrap();
        assert_eq!(cs.centroids[0].centroid, SubPixel::new(7.5, 19.5));
    }

    #[test]
    fn l_shape_centroid_matches_pixel_average() {
        let mut p = blank_person(0, 30, 30);
        let mut pts = Vec::new();
        for y in 2..20 {
            pts.push((2usize, y));
            pts.push((3, y));
        }
        for x in 4..15 {
            pts.push((x, 18));
            pts.push((x, 19));
        }
        for &(x, y) in &pts {
            p.mask.set(x, y, true);
        }
        let s = scene_of(30, 30, vec![p]);
        let (off, cs) = encode_offsets(&s, CentroidMode::Static, 5.0).unwrap();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0 as f64).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1 as f64).sum::<f64>() / n;
        let c = cs.centroids[0].centroid;
        assert!((c.x - mx).abs() <= CENTROID_QUANTUM && (c.y - my).abs() <= CENTROID_QUANTUM);
        // The mean of an L lies outside it.
        assert!(!s.persons[0].mask.get(c.x.round() as usize, c.y.round() as usize));
        assert!(off.foreground.get(2, 2));
    }

    #[test]
    fn offsets_reproduce_centroids_exactly() {
        let s = generate_scene(3, (401, 401), 21).unwrap();
        let s = occlude_scene(&s, (0, 1), 0.5, 2).unwrap().scene;
        for mode in [CentroidMode::Static, CentroidMode::Dynamic] {
            let (off, cs) = encode_offsets(&s, mode, 5.0).unwrap();
            for (person, c) in s.persons.iter().zip(&cs.centroids) {
                for p in person.mask.pixels() {
                    let (dx, dy) = off.offset(p.x as usize, p.y as usize);
                    assert_eq!(p.x as f64 + dx as f64, c.centroid.x);
                    assert_eq!(p.y as f64 + dy as f64, c.centroid.y);
                    assert_eq!((p.x as f32 + dx) as f64, c.centroid.x);
                }
            }
            for (i, &fg) in off.foreground.data().iter().enumerate() {
                if !fg {
                    assert_eq!(off.field.data()[i], 0.0);
                    assert_eq!(off.field.data()[i + 401 * 401], 0.0);
                }
            }
        }
    }

    #[test]
    fn dynamic_centroid_is_visible_keypoint_nearest_mean() {
        let s = generate_scene(2, (401, 401), 5).unwrap();
        let (_, cs) = encode_offsets(&s, CentroidMode::Dynamic, 5.0).unwrap();
        for (person, c) in s.persons.iter().zip(&cs.centroids) {
            let mean = person.mask.centroid().unwrap();
            let best = (0..NUM_JOINTS)
                .map(|j| person.keypoints[j].distance(mean))
                .fold(f64::INFINITY, f64::min);
            assert!((c.centroid.distance(mean) - best).abs() < 1e-3);
        }
    }

    #[test]
    fn empty_mask_is_an_error() {
        let s = scene_of(16, 16, vec![blank_person(0, 16, 16)]);
        assert!(matches!(
            encode_offsets(&s, CentroidMode::Static, 5.0),
            Err(KdcError::Empty(_))
        ));
        let s = scene_of(16, 16, vec![]);
        assert!(encode_offsets(&s, CentroidMode::Static, 5.0).is_err());
    }

    #[test]
    fn exclusion_examples() {
        let s = generate_scene(2, (401, 401), 8).unwrap();
        assert!(exclusion_mask(&s).data().iter().all(|&v| v));

        let mut flagged = s.clone();
        flagged.persons[1].ignore = true;
        let ex = exclusion_mask(&flagged);
        for (i, &keep) in ex.data().iter().enumerate() {
            assert_eq!(keep, !flagged.persons[1].mask.data()[i]);
        }

        // Front person unflagged, back person flagged: overlap stays trainable.
        let o = occlude_scene(&s, (0, 1), 0.4, 8).unwrap().scene;
        let mut o = o;
        o.persons[1].ignore = true;
        let ex = exclusion_mask(&o);
        let owners = o.owner_map();
        for (i, &keep) in ex.data().iter().enumerate() {
            let expected = !matches!(owners[i], Some(k) if o.persons[k].ignore);
            assert_eq!(keep, expected);
        }
        let overlap = o.persons[1]
            .body
            .pixels()
            .filter(|p| o.persons[0].mask.get(p.x as usize, p.y as usize))
            .count();
        assert!(overlap > 0);
    }
}
