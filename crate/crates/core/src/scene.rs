//! Deterministic synthetic stick-figure scenes.
//!
//! Each person is an articulated skeleton with randomized joint angles whose
//! body mask is the union of limb capsules plus a head disk. Persons are
//! placed without overlap; [`occlude_scene`] then pulls one person behind
//! another to build crowded configurations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, KdcError, Result};
use crate::field::{BinaryMask, SubPixel};
use crate::skeleton::{joint::*, NUM_JOINTS};

/// Default canvas side, matching the reference training resolution.
pub const DEFAULT_CANVAS: usize = 401;
pub const MIN_CANVAS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct PersonGT {
    pub instance_id: u32,
    pub keypoints: [SubPixel; NUM_JOINTS],
    pub visible: [bool; NUM_JOINTS],
    /// Pixels owned by this instance.
    pub mask: BinaryMask,
    /// Unoccluded body silhouette; equal to `mask` unless another person covers it.
    pub body: BinaryMask,
    /// Small or crowded instance excluded from training targets.
    pub ignore: bool,
    /// Fraction of the body covered by other instances.
    pub occlusion: f64,
}

impl PersonGT {
    pub fn num_visible(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    pub fn area(&self) -> usize {
        self.mask.area()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    pub persons: Vec<PersonGT>,
}

impl Scene {
    pub fn person(&self, instance_id: u32) -> Option<&PersonGT> {
        self.persons.iter().find(|p| p.instance_id == instance_id)
    }

    /// Largest per-person occlusion fraction in the scene.
    pub fn max_occlusion(&self) -> f64 {
        self.persons.iter().map(|p| p.occlusion).fold(0.0, f64::max)
    }

    /// Owning instance index per pixel, `None` for background.
    pub fn owner_map(&self) -> Vec<Option<usize>> {
        let mut owners = vec![None; self.height * self.width];
        for (k, p) in self.persons.iter().enumerate() {
            for (i, &v) in p.mask.data().iter().enumerate() {
                if v {
                    owners[i] = Some(k);
                }
            }
        }
        owners
    }

    pub fn foreground(&self) -> BinaryMask {
        let mut fg = BinaryMask::new(self.height, self.width);
        for p in &self.persons {
            for q in p.mask.pixels() {
                fg.set(q.x as usize, q.y as usize, true);
            }
        }
        fg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub num_persons: usize,
    pub height: usize,
    pub width: usize,
    /// Minimum clearance in pixels between person bounding boxes.
    pub min_gap: f64,
    /// Persons whose mask area is below this many pixels are flagged `ignore`.
    pub small_area: usize,
}

impl SceneConfig {
    pub fn new(num_persons: usize, height: usize, width: usize) -> Self {
        Self {
            num_persons,
            height,
            width,
            min_gap: 40.0,
            small_area: 32 * 32,
        }
    }
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::new(1, DEFAULT_CANVAS, DEFAULT_CANVAS)
    }
}

/// Generates `num_persons` non-overlapping figures on an `(height, width)` canvas.
pub fn generate_scene(num_persons: usize, canvas: (usize, usize), rng_seed: u64) -> Result<Scene> {
    generate_scene_with(&SceneConfig::new(num_persons, canvas.0, canvas.1), rng_seed)
}

pub fn generate_scene_with(config: &SceneConfig, rng_seed: u64) -> Result<Scene> {
    if config.num_persons == 0 {
        return Err(invalid("num_persons must be at least 1"));
    }
    if config.height < MIN_CANVAS || config.width < MIN_CANVAS {
        return Err(invalid(format!(
            "canvas {}x{} is smaller than {MIN_CANVAS}x{MIN_CANVAS}",
            config.height, config.width
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let base_scale = (config.height.min(config.width) as f64 / DEFAULT_CANVAS as f64).clamp(0.3, 1.0);
    let (h, w) = (config.height, config.width);
    let n = config.num_persons;
    // One jittered figure per grid cell keeps persons apart on any canvas.
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (cell_w, cell_h) = (w as f64 / cols as f64, h as f64 / rows as f64);
    let gap = config.min_gap * base_scale;
    let mut cells: Vec<usize> = (0..rows * cols).collect();
    for i in (1..cells.len()).rev() {
        cells.swap(i, rng.random_range(0..=i));
    }
    let mut figures: Vec<Figure> = Vec::with_capacity(n);
    for (k, &cell) in cells.iter().take(n).enumerate() {
        let (cx0, cy0) = ((cell % cols) as f64 * cell_w, (cell / cols) as f64 * cell_h);
        let margin_x = if cols > 1 { gap / 2.0 } else { 2.0 };
        let margin_y = if rows > 1 { gap / 2.0 } else { 2.0 };
        let (ax0, ay0) = ((cx0 + margin_x).max(2.0), (cy0 + margin_y).max(2.0));
        let (ax1, ay1) = (
            (cx0 + cell_w - margin_x).min(w as f64 - 3.0),
            (cy0 + cell_h - margin_y).min(h as f64 - 3.0),
        );
        let mut placed = None;
        for _ in 0..200 {
            let scale = base_scale * rng.random_range(0.9..1.1);
            let fig = Figure::random(&mut rng, scale);
            let [x0, y0, x1, y1] = fig.extent();
            if x1 - x0 >= ax1 - ax0 || y1 - y0 >= ay1 - ay0 {
                continue;
            }
            let ox = rng.random_range(ax0 - x0..ax1 - x1);
            let oy = rng.random_range(ay0 - y0..ay1 - y1);
            placed = Some(fig.translated(ox, oy));
            break;
        }
        let fig = placed.ok_or_else(|| {
            invalid(format!("canvas {h}x{w} cannot fit {n} figures (placed {k})"))
        })?;
        figures.push(fig);
    }

    let persons = figures
        .into_iter()
        .enumerate()
        .map(|(k, fig)| {
            let body = fig.rasterize(h, w);
            PersonGT {
                instance_id: k as u32,
                keypoints: fig.joints,
                visible: [true; NUM_JOINTS],
                ignore: body.area() < config.small_area,
                mask: body.clone(),
                body,
                occlusion: 0.0,
            }
        })
        .collect();
    let mut scene = Scene {
        height: h,
        width: w,
        persons,
    };
    let order: Vec<usize> = (0..scene.persons.len()).collect();
    resolve_ownership(&mut scene, &order);
    Ok(scene)
}

/// Result of [`occlude_scene`].
#[derive(Debug, Clone)]
pub struct Occlusion {
    pub scene: Scene,
    /// Measured `|front ∩ back| / |back|` over full bodies.
    pub achieved: f64,
    /// Whether `achieved` reaches the requested fraction.
    pub reached: bool,
}

/// Moves `pair.1` behind `pair.0` so that at least `overlap_fraction` of its body is covered.
///
/// Translations are searched along rays leaving the front person's center; the
/// farthest placement meeting the target wins. When no placement on the canvas
/// meets it, the best achievable configuration is returned with `reached = false`.
pub fn occlude_scene(
    scene: &Scene,
    pair: (u32, u32),
    overlap_fraction: f64,
    rng_seed: u64,
) -> Result<Occlusion> {
    if !(0.0..=1.0).contains(&overlap_fraction) {
        return Err(invalid(format!(
            "overlap_fraction must lie in [0, 1], got {overlap_fraction}"
        )));
    }
    let fi = index_of(scene, pair.0)?;
    let bi = index_of(scene, pair.1)?;
    if fi == bi {
        return Err(invalid("occlusion pair must name two different persons"));
    }
    let front = &scene.persons[fi];
    let back = &scene.persons[bi];
    let back_area = back.body.area();
    if back_area == 0 {
        return Err(KdcError::Empty(format!("person {} has an empty body", pair.1)));
    }
    let (fx0, fy0, fx1, fy1) = front.body.bbox().ok_or_else(|| KdcError::Empty("front body".into()))?;
    let (bx0, by0, bx1, by1) = back.body.bbox().expect("nonempty");
    let (h, w) = (scene.height as i64, scene.width as i64);
    let back_pixels: Vec<(i64, i64)> = back.body.pixels().map(|p| (p.x as i64, p.y as i64)).collect();
    let fits = |t: (i64, i64)| {
        bx0 as i64 + t.0 >= 0 && by0 as i64 + t.1 >= 0 && bx1 as i64 + t.0 < w && by1 as i64 + t.1 < h
    };
    let coverage = |t: (i64, i64), stride: usize| -> f64 {
        let mut hit = 0usize;
        let mut total = 0usize;
        for &(x, y) in back_pixels.iter().step_by(stride) {
            total += 1;
            if front.body.get_signed(x + t.0, y + t.1) {
                hit += 1;
            }
        }
        hit as f64 / total as f64
    };

    // Coarse-to-fine search for the translation with maximal coverage.
    let tx_range = (fx0 as i64 - bx1 as i64, fx1 as i64 - bx0 as i64);
    let ty_range = (fy0 as i64 - by1 as i64, fy1 as i64 - by0 as i64);
    let mut peak: Option<(f64, (i64, i64))> = None;
    for ty in (ty_range.0..=ty_range.1).step_by(4) {
        for tx in (tx_range.0..=tx_range.1).step_by(4) {
            if !fits((tx, ty)) {
                continue;
            }
            let c = coverage((tx, ty), 3);
            if peak.is_none_or(|(b, _)| c > b) {
                peak = Some((c, (tx, ty)));
            }
        }
    }
    let (_, coarse) = peak.ok_or_else(|| invalid("no placement of the back person fits the canvas"))?;
    let mut best = (coverage(coarse, 1), coarse);
    for ty in coarse.1 - 4..=coarse.1 + 4 {
        for tx in coarse.0 - 4..=coarse.0 + 4 {
            if fits((tx, ty)) {
                let c = coverage((tx, ty), 1);
                if c > best.0 {
                    best = (c, (tx, ty));
                }
            }
        }
    }

    // Walk outward from the best placement along a seeded direction and keep
    // the farthest translation that still meets the target.
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let theta0 = rng.random_range(0.0..std::f64::consts::TAU);
    let (best_cov, anchor) = best;
    let (achieved, (tx, ty), reached) = if best_cov < overlap_fraction {
        (best_cov, anchor, false)
    } else {
        let max_d = h.max(w) as f64 * 1.5;
        let mut pick = (best_cov, anchor);
        'dirs: for k in 0..16 {
            let theta = theta0 + k as f64 * std::f64::consts::TAU / 16.0;
            let mut d = max_d;
            while d > 0.0 {
                let t = (
                    anchor.0 + (d * theta.cos()).round() as i64,
                    anchor.1 + (d * theta.sin()).round() as i64,
                );
                d -= 1.0;
                if !fits(t) {
                    continue;
                }
                let c = coverage(t, 1);
                if c >= overlap_fraction {
                    pick = (c, t);
                    break 'dirs;
                }
            }
        }
        (pick.0, pick.1, true)
    };

    let mut out = scene.clone();
    {
        let moved = &mut out.persons[bi];
        for q in moved.keypoints.iter_mut() {
            q.x += tx as f64;
            q.y += ty as f64;
        }
        moved.body = shift_mask(&moved.body, tx, ty);
    }
    // Back person lowest, everyone else keeps relative depth.
    let mut order: Vec<usize> = vec![bi];
    order.extend((0..out.persons.len()).filter(|&k| k != bi));
    resolve_ownership(&mut out, &order);
    Ok(Occlusion {
        scene: out,
        achieved,
        reached,
    })
}

/// Scene draws tried by [`generate_occluded`] before settling for the best placement.
pub const OCCLUSION_ATTEMPTS: u64 = 16;

/// Generates a scene whose person 1 hides behind person 0 (or the reverse) by
/// at least `overlap_fraction`, redrawing with derived seeds when the pose pair
/// cannot reach it. Returns the occlusion and the seed that produced it; if no
/// draw reaches the target, the best one is returned with `reached = false`.
pub fn generate_occluded(
    num_persons: usize,
    canvas: (usize, usize),
    overlap_fraction: f64,
    rng_seed: u64,
) -> Result<(Occlusion, u64)> {
    if num_persons < 2 {
        return Err(invalid("occlusion needs at least 2 persons"));
    }
    let mut best: Option<(Occlusion, u64)> = None;
    for attempt in 0..OCCLUSION_ATTEMPTS {
        let seed = rng_seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let scene = generate_scene(num_persons, canvas, seed)?;
        for pair in [(0, 1), (1, 0)] {
            let occ = occlude_scene(&scene, pair, overlap_fraction, seed)?;
            if occ.reached {
                return Ok((occ, seed));
            }
            if best.as_ref().is_none_or(|(b, _)| occ.achieved > b.achieved) {
                best = Some((occ, seed));
            }
        }
    }
    Ok(best.expect("at least one attempt"))
}

fn index_of(scene: &Scene, id: u32) -> Result<usize> {
    scene
        .persons
        .iter()
        .position(|p| p.instance_id == id)
        .ok_or_else(|| invalid(format!("no person with instance id {id}")))
}

fn shift_mask(mask: &BinaryMask, tx: i64, ty: i64) -> BinaryMask {
    let mut out = BinaryMask::new(mask.height(), mask.width());
    for p in mask.pixels() {
        let (x, y) = (p.x as i64 + tx, p.y as i64 + ty);
        if x >= 0 && y >= 0 && (x as usize) < mask.width() && (y as usize) < mask.height() {
            out.set(x as usize, y as usize, true);
        }
    }
    out
}

/// Paints bodies back-to-front in `order` and derives masks, visibility and occlusion.
fn resolve_ownership(scene: &mut Scene, order: &[usize]) {
    let (h, w) = (scene.height, scene.width);
    let mut owner: Vec<Option<usize>> = vec![None; h * w];
    for &k in order {
        for (i, &v) in scene.persons[k].body.data().iter().enumerate() {
            if v {
                owner[i] = Some(k);
            }
        }
    }
    for (k, person) in scene.persons.iter_mut().enumerate() {
        let data: Vec<bool> = owner.iter().map(|&o| o == Some(k)).collect();
        person.mask = BinaryMask::from_vec(h, w, data).expect("shape");
        let body_area = person.body.area();
        person.occlusion = if body_area == 0 {
            0.0
        } else {
            1.0 - person.mask.area() as f64 / body_area as f64
        };
        for j in 0..NUM_JOINTS {
            let p = person.keypoints[j].round();
            person.visible[j] = p.x >= 0
                && p.y >= 0
                && (p.x as usize) < w
                && (p.y as usize) < h
                && owner[p.y as usize * w + p.x as usize] == Some(k);
        }
    }
}

/// One articulated figure in canvas coordinates.
#[derive(Debug, Clone)]
struct Figure {
    joints: [SubPixel; NUM_JOINTS],
    head_center: SubPixel,
    head_radius: f64,
    capsules: Vec<(SubPixel, SubPixel, f64)>,
}

impl Figure {
    fn random(rng: &mut ChaCha8Rng, s: f64) -> Self {
        let rot = |v: (f64, f64), a: f64| (v.0 * a.cos() - v.1 * a.sin(), v.0 * a.sin() + v.1 * a.cos());
        let add = |p: SubPixel, v: (f64, f64)| SubPixel::new(p.x + v.0, p.y + v.1);
        let polar = |len: f64, a: f64| (len * a.sin(), len * a.cos());

        let lean: f64 = rng.random_range(-0.2..0.2);
        let hip_mid = SubPixel::new(0.0, 0.0);
        let up = rot((0.0, -1.0), lean);
        let side = rot((1.0, 0.0), lean);
        let torso = 42.0 * s;
        let sh_mid = add(hip_mid, (up.0 * torso, up.1 * torso));
        let mut j = [SubPixel::default(); NUM_JOINTS];
        // Subject's left appears on image right.
        j[LEFT_SHOULDER] = add(sh_mid, (side.0 * 16.0 * s, side.1 * 16.0 * s));
        j[RIGHT_SHOULDER] = add(sh_mid, (-side.0 * 16.0 * s, -side.1 * 16.0 * s));
        j[LEFT_HIP] = add(hip_mid, (side.0 * 11.0 * s, side.1 * 11.0 * s));
        j[RIGHT_HIP] = add(hip_mid, (-side.0 * 11.0 * s, -side.1 * 11.0 * s));
        let head_tilt: f64 = rng.random_range(-0.25..0.25);
        let neck = rot(up, head_tilt);
        j[NOSE] = add(sh_mid, (neck.0 * 15.0 * s, neck.1 * 15.0 * s));
        let nose = j[NOSE];
        let face = |dx: f64, dy: f64| {
            let v = rot((dx * s, dy * s), lean + head_tilt);
            add(nose, v)
        };
        j[LEFT_EYE] = face(4.5, -4.0);
        j[RIGHT_EYE] = face(-4.5, -4.0);
        j[LEFT_EAR] = face(9.0, -1.5);
        j[RIGHT_EAR] = face(-9.0, -1.5);

        // Limb angles measured from straight down, positive toward image right.
        for (sh, el, wr, sign) in [
            (LEFT_SHOULDER, LEFT_ELBOW, LEFT_WRIST, 1.0),
            (RIGHT_SHOULDER, RIGHT_ELBOW, RIGHT_WRIST, -1.0),
        ] {
            let upper = sign * rng.random_range(0.15..1.9) + lean;
            let bend = sign * rng.random_range(-0.4..1.6);
            j[el] = add(j[sh], polar(26.0 * s, upper));
            j[wr] = add(j[el], polar(24.0 * s, upper + bend));
        }
        for (hp, kn, an, sign) in [
            (LEFT_HIP, LEFT_KNEE, LEFT_ANKLE, 1.0),
            (RIGHT_HIP, RIGHT_KNEE, RIGHT_ANKLE, -1.0),
        ] {
            let thigh = sign * rng.random_range(-0.1..0.55) + lean * 0.5;
            let shin = thigh - sign * rng.random_range(0.0..0.6);
            j[kn] = add(j[hp], polar(30.0 * s, thigh));
            j[an] = add(j[kn], polar(30.0 * s, shin));
        }

        let limb = (5.0 * s).max(1.5);
        let leg = (6.5 * s).max(1.5);
        let trunk = (8.0 * s).max(1.5);
        let mut capsules = vec![
            (j[LEFT_SHOULDER], j[LEFT_ELBOW], limb),
            (j[LEFT_ELBOW], j[LEFT_WRIST], limb),
            (j[RIGHT_SHOULDER], j[RIGHT_ELBOW], limb),
            (j[RIGHT_ELBOW], j[RIGHT_WRIST], limb),
            (j[LEFT_HIP], j[LEFT_KNEE], leg),
            (j[LEFT_KNEE], j[LEFT_ANKLE], leg),
            (j[RIGHT_HIP], j[RIGHT_KNEE], leg),
            (j[RIGHT_KNEE], j[RIGHT_ANKLE], leg),
            (j[LEFT_SHOULDER], j[RIGHT_SHOULDER], trunk),
            (j[LEFT_HIP], j[RIGHT_HIP], trunk),
            (j[LEFT_SHOULDER], j[LEFT_HIP], trunk),
            (j[RIGHT_SHOULDER], j[RIGHT_HIP], trunk),
            (sh_mid, hip_mid, (13.0 * s).max(1.5)),
            (sh_mid, j[NOSE], (5.0 * s).max(1.5)),
        ];
        capsules.shrink_to_fit();
        Figure {
            head_center: face(0.0, -2.0),
            head_radius: 13.0 * s,
            joints: j,
            capsules,
        }
    }

    fn translated(mut self, ox: f64, oy: f64) -> Self {
        let mv = |p: &mut SubPixel| {
            p.x += ox;
            p.y += oy;
        };
        self.joints.iter_mut().for_each(mv);
        mv(&mut self.head_center);
        for (a, b, _) in self.capsules.iter_mut() {
            mv(a);
            mv(b);
        }
        self
    }

    /// Bounding extent of every rasterized shape, `[x0, y0, x1, y1]`.
    fn extent(&self) -> [f64; 4] {
        let mut e = [
            self.head_center.x - self.head_radius,
            self.head_center.y - self.head_radius,
            self.head_center.x + self.head_radius,
            self.head_center.y + self.head_radius,
        ];
        for (a, b, r) in &self.capsules {
            e[0] = e[0].min(a.x.min(b.x) - r);
            e[1] = e[1].min(a.y.min(b.y) - r);
            e[2] = e[2].max(a.x.max(b.x) + r);
            e[3] = e[3].max(a.y.max(b.y) + r);
        }
        e
    }

    fn rasterize(&self, h: usize, w: usize) -> BinaryMask {
        let mut m = BinaryMask::new(h, w);
        let mut paint = |x0: f64, y0: f64, x1: f64, y1: f64, inside: &dyn Fn(f64, f64) -> bool| {
            let xa = x0.floor().max(0.0) as usize;
            let ya = y0.floor().max(0.0) as usize;
            let xb = (x1.ceil() as i64).min(w as i64 - 1);
            let yb = (y1.ceil() as i64).min(h as i64 - 1);
            if xb < 0 || yb < 0 {
                return;
            }
            for y in ya..=yb as usize {
                for x in xa..=xb as usize {
                    if inside(x as f64, y as f64) {
                        m.set(x, y, true);
                    }
                }
            }
        };
        let (c, r) = (self.head_center, self.head_radius);
        paint(c.x - r, c.y - r, c.x + r, c.y + r, &|x, y| {
            SubPixel::new(x, y).distance_sq(c) <= r * r
        });
        for &(a, b, r) in &self.capsules {
            paint(
                a.x.min(b.x) - r,
                a.y.min(b.y) - r,
                a.x.max(b.x) + r,
                a.y.max(b.y) + r,
                &|x, y| segment_distance_sq(SubPixel::new(x, y), a, b) <= r * r,
            );
        }
        m
    }
}

fn segment_distance_sq(p: SubPixel, a: SubPixel, b: SubPixel) -> f64 {
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        (((p.x - a.x) * vx + (p.y - a.y) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.distance_sq(SubPixel::new(a.x + t * vx, a.y + t * vy))
}
