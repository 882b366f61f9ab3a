//! Dense fields, grid geometry and Gaussian kernels.
//!
//! Fields are stored planar (channel-major): the value for channel `c`, row `y`,
//! column `x` lives at `data[(c * height + y) * width + x]`. Pixel centers sit at
//! integer coordinates with `x` the column and `y` the row, origin top-left.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_mismatch, KdcError, Result};

/// Integer pixel position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPoint {
    pub x: i32,
    pub y: i32,
}

impl GridPoint {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn to_subpixel(self) -> SubPixel {
        SubPixel::new(self.x as f64, self.y as f64)
    }
}

/// Real-valued image position.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SubPixel {
    pub x: f64,
    pub y: f64,
}

impl SubPixel {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance_sq(self, other: SubPixel) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn distance(self, other: SubPixel) -> f64 {
        self.distance_sq(other).sqrt()
    }

    /// Nearest pixel center.
    pub fn round(self) -> GridPoint {
        GridPoint::new(self.x.round() as i32, self.y.round() as i32)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// `true` iff `p` lies in the closed disk of radius `radius` centered at `q`.
pub fn disk_contains(p: GridPoint, q: SubPixel, radius: f64) -> Result<bool> {
    check_radius(radius)?;
    Ok(p.to_subpixel().distance_sq(q) <= radius * radius)
}

pub(crate) fn check_radius(radius: f64) -> Result<()> {
    if radius > 0.0 && radius.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("radius must be positive, got {radius}")))
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("sigma must be positive, got {sigma}")))
    }
}

/// Normalized isotropic 2D Gaussian density `exp(-(x²+y²)/2σ²) / 2πσ²`.
pub fn gaussian_kernel(x: f64, y: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let s2 = sigma * sigma;
    Ok((-(x * x + y * y) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2))
}

/// Discrete 1D Gaussian taps over `[-⌈3σ⌉, ⌈3σ⌉]`, normalized to sum 1.
pub fn gaussian_taps(sigma: f64) -> Result<Vec<f32>> {
    check_sigma(sigma)?;
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    Ok(taps.iter().map(|&w| (w / total) as f32).collect())
}

/// Row-major binary image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_mismatch(height * width, data.len()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Lookup that treats out-of-bounds positions as background.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            false
        } else {
            self.get(x as usize, y as usize)
        }
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Foreground pixel positions in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = GridPoint> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| GridPoint::new((i % w) as i32, (i / w) as i32))
    }

    /// Mean foreground position, `None` for an empty mask.
    pub fn centroid(&self) -> Option<SubPixel> {
        let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0usize);
        for p in self.pixels() {
            sx += p.x as f64;
            sy += p.y as f64;
            n += 1;
        }
        (n > 0).then(|| SubPixel::new(sx / n as f64, sy / n as f64))
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)`.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for p in self.pixels() {
            let (x, y) = (p.x as usize, p.y as usize);
            bb = Some(match bb {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        bb
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    pub fn union_area(&self, other: &BinaryMask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a || b)
            .count()
    }

    /// Number of 4-connected foreground components.
    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.data.len()];
        let mut stack = Vec::new();
        let mut count = 0;
        for start in 0..self.data.len() {
            if !self.data[start] || seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (x, y) = (i % self.width, i / self.width);
                let mut visit = |j: usize| {
                    if self.data[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < self.width {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - self.width);
                }
                if y + 1 < self.height {
                    visit(i + self.width);
                }
            }
        }
        count
    }
}

/// `height × width × channels` grid of finite `f32` values in planar layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseField {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl DenseField {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(shape_mismatch(
                format!("{height}x{width}x{channels}"),
                format!("{} values", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(KdcError::Format(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Stacks single-plane slices into one field.
    pub fn from_planes(height: usize, width: usize, planes: Vec<Vec<f32>>) -> Result<Self> {
        let channels = planes.len();
        let data: Vec<f32> = planes.into_iter().flatten().collect();
        Self::from_vec(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn same_shape(&self, other: &DenseField) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }

    #[inline]
    pub fn index(&self, c: usize, x: usize, y: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[self.index(c, x, y)]
    }

    /// Stores `value`, replacing non-finite inputs with zero.
    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, value: f32) {
        let i = self.index(c, x, y);
        self.data[i] = if value.is_finite() { value } else { 0.0 };
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn channel_field(&self, c: usize) -> DenseField {
        DenseField {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.channel(c).to_vec(),
        }
    }

    /// Elementwise map; non-finite results are replaced with zero.
    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> DenseField {
        let data = self
            .data
            .iter()
            .map(|&v| {
                let r = f(v);
                if r.is_finite() {
                    r
                } else {
                    0.0
                }
            })
            .collect();
        DenseField { data, ..*self }
    }

    /// Bilinear sample of channel `c` at a sub-pixel position; zero outside the grid.
    pub fn sample_bilinear(&self, c: usize, at: SubPixel) -> f32 {
        let x0 = at.x.floor();
        let y0 = at.y.floor();
        let fx = (at.x - x0) as f32;
        let fy = (at.y - y0) as f32;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let plane = self.channel(c);
        let fetch = |x: i64, y: i64| -> f32 {
            if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
                0.0
            } else {
                plane[y as usize * self.width + x as usize]
            }
        };
        let top = fetch(x0, y0) * (1.0 - fx) + fetch(x0 + 1, y0) * fx;
        let bottom = fetch(x0, y0 + 1) * (1.0 - fx) + fetch(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Position of the maximum of channel `c`, first in row-major order on ties.
    pub fn argmax(&self, c: usize) -> GridPoint {
        let plane = self.channel(c);
        let mut best = 0;
        for (i, &v) in plane.iter().enumerate() {
            if v > plane[best] {
                best = i;
            }
        }
        GridPoint::new((best % self.width) as i32, (best / self.width) as i32)
    }

    pub fn channel_sum(&self, c: usize) -> f64 {
        self.channel(c).iter().map(|&v| v as f64).sum()
    }
}

/// Smooths each channel with its own normalized Gaussian.
///
/// The kernel is truncated at `⌈3σ⌉` and renormalized over the in-bounds taps,
/// so constants and mass are preserved up to border effects on mass.
pub fn smooth_gaussian(field: &DenseField, sigma_per_channel: &[f64]) -> Result<DenseField> {
    if sigma_per_channel.len() != field.channels {
        return Err(shape_mismatch(
            format!("{} sigmas", field.channels),
            sigma_per_channel.len(),
        ));
    }
    let kernels = sigma_per_channel
        .iter()
        .map(|&s| gaussian_taps(s))
        .collect::<Result<Vec<_>>>()?;
    let (h, w) = (field.height, field.width);
    let mut out = DenseField::zeros(h, w, field.channels);
    out.data
        .par_chunks_mut(h * w)
        .zip(field.data.par_chunks(h * w))
        .zip(kernels.par_iter())
        .for_each(|((dst, src), taps)| smooth_plane(src, dst, h, w, taps));
    Ok(out)
}

/// Separable renormalized convolution of one plane.
pub(crate) fn smooth_plane(src: &[f32], dst: &mut [f32], h: usize, w: usize, taps: &[f32]) {
    let r = taps.len() / 2;
    if r == 0 {
        dst.copy_from_slice(src);
        return;
    }
    // Zero input stays exactly zero, so only the support of each row is convolved.
    let mut tmp = vec![0.0f32; h * w];
    let mut live: Vec<Option<(usize, usize)>> = vec![None; h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let Some(first) = row.iter().position(|&v| v != 0.0) else {
            continue;
        };
        let last = row.iter().rposition(|&v| v != 0.0).unwrap_or(first);
        let span = (first.saturating_sub(r), (last + r).min(w - 1));
        live[y] = Some(span);
        convolve_span(row, &mut tmp[y * w..(y + 1) * w], taps, r, span.0, span.1);
    }
    let mut acc = vec![0.0f32; w];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        let out = &mut dst[y * w..(y + 1) * w];
        out.iter_mut().for_each(|d| *d = 0.0);
        let Some((x0, x1)) = live[lo..=hi]
            .iter()
            .flatten()
            .fold(None, |u: Option<(usize, usize)>, &(a, b)| Some(u.map_or((a, b), |(ua, ub)| (ua.min(a), ub.max(b)))))
        else {
            continue;
        };
        let acc = &mut acc[x0..=x1];
        acc.iter_mut().for_each(|a| *a = 0.0);
        let mut norm = 0.0f32;
        for yy in lo..=hi {
            let wt = taps[yy + r - y];
            norm += wt;
            if live[yy].is_some() {
                for (a, &v) in acc.iter_mut().zip(&tmp[yy * w + x0..=yy * w + x1]) {
                    *a += wt * v;
                }
            }
        }
        for (d, &a) in out[x0..=x1].iter_mut().zip(acc.iter()) {
            *d = a / norm;
        }
    }
}

/// Convolves outputs `from..=to`; the rest of `dst` is left untouched.
fn convolve_span(src: &[f32], dst: &mut [f32], taps: &[f32], r: usize, from: usize, to: usize) {
    let n = src.len();
    let full: f32 = taps.iter().sum();
    let edge = |i: usize, dst: &mut [f32]| {
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(n - 1);
        let (mut acc, mut norm) = (0.0f32, 0.0f32);
        for j in lo..=hi {
            let wt = taps[j + r - i];
            acc += wt * src[j];
            norm += wt;
        }
        dst[i] = acc / norm;
    };
    let (a, b) = (from.max(r), to.min(n.saturating_sub(r + 1)));
    if n <= 2 * r || a > b {
        (from..=to).for_each(|i| edge(i, dst));
        return;
    }
    (from..a).for_each(|i| edge(i, dst));
    let out = &mut dst[a..=b];
    out.iter_mut().for_each(|d| *d = 0.0);
    for (k, &t) in taps.iter().enumerate() {
        for (d, &v) in out.iter_mut().zip(&src[a + k - r..=b + k - r]) {
            *d += t * v;
        }
    }
    out.iter_mut().for_each(|d| *d /= full);
    (b + 1..=to).for_each(|i| edge(i, dst));
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct 2D renormalized convolution, independent of the separable path.
    fn dense_direct(field: &DenseField, sigma: f64) -> Vec<f32> {
        let r = (3.0 * sigma).ceil() as i64;
        let (h, w) = (field.height() as i64, field.width() as i64);
        let mut out = vec![0.0f32; (h * w) as usize];
        for y in 0..h {
            for x in 0..w {
                let (mut acc, mut norm) = (0.0f64, 0.0f64);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (xx, yy) = (x + dx, y + dy);
                        if xx < 0 || yy < 0 || xx >= w || yy >= h {
                            continue;
                        }
                        let wt = gaussian_kernel(dx as f64, dy as f64, sigma).unwrap();
                        acc += wt * field.get(0, xx as usize, yy as usize) as f64;
                        norm += wt;
                    }
                }
                out[(y * w + x) as usize] = (acc / norm) as f32;
            }
        }
        out
    }

    fn local_maxima(plane: &[f32], w: usize, h: usize) -> Vec<(usize, usize)> {
        let mut peaks = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let v = plane[y * w + x];
                if v <= 0.0 {
                    continue;
                }
                let mut is_max = true;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                        if (dx, dy) == (0, 0) || xx < 0 || yy < 0 || xx >= w as i64 || yy >= h as i64 {
                            continue;
                        }
                        if plane[yy as usize * w + xx as usize] >= v {
                            is_max = false;
                        }
                    }
                }
                if is_max {
                    peaks.push((x, y));
                }
            }
        }
        peaks
    }

    #[test]
    fn disk_membership_examples() {
        let origin = SubPixel::new(0.0, 0.0);
        assert!(disk_contains(GridPoint::new(0, 0), origin, 32.0).unwrap());
        assert!(disk_contains(GridPoint::new(32, 0), origin, 32.0).unwrap());
        assert!(!disk_contains(GridPoint::new(23, 23), origin, 32.0).unwrap());
        assert!((1058f64.sqrt() - 32.53).abs() < 0.01);
        assert!(disk_contains(GridPoint::new(0, 0), origin, 0.0).is_err());
        assert!(disk_contains(GridPoint::new(0, 0), origin, -1.0).is_err());
    }

    #[test]
    fn gaussian_kernel_examples() {
        let g = |x, y, s| gaussian_kernel(x, y, s).unwrap();
        assert!((g(0.0, 0.0, 1.0) - 0.159155).abs() < 1e-6);
        assert!((g(0.0, 0.0, 0.5) - 2.0 / std::f64::consts::PI).abs() < 1e-12);
        let oracle = 1.0 / (2.0 * std::f64::consts::PI) * (-0.5f64).exp();
        assert!((g(1.0, 0.0, 1.0) - oracle).abs() < 1e-12);
        assert!((g(1.0, 0.0, 1.0) - 0.096532).abs() < 1e-6);
        assert!(gaussian_kernel(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn impulse_keeps_center_and_mass() {
        let mut f = DenseField::zeros(9, 9, 1);
        f.set(0, 4, 4, 1.0);
        let s = smooth_gaussian(&f, &[0.5]).unwrap();
        assert_eq!(s.argmax(0), GridPoint::new(4, 4));
        assert!((s.channel_sum(0) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn constant_field_is_fixed_point() {
        for sigma in [0.1, 0.5, 1.0, 2.5] {
            let f = DenseField::constant(12, 17, 1, 0.37);
            let s = smooth_gaussian(&f, &[sigma]).unwrap();
            assert!(s.data().iter().all(|&v| (v - 0.37).abs() < 1e-5));
        }
    }

    #[test]
    fn close_impulses_stay_separate() {
        let mut f = DenseField::zeros(15, 21, 1);
        f.set(0, 7, 7, 1.0);
        f.set(0, 13, 7, 1.0);
        let s = smooth_gaussian(&f, &[0.1]).unwrap();
        let oracle = dense_direct(&f, 0.1);
        for (a, b) in s.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6);
        }
        let peaks = local_maxima(&oracle, 21, 15);
        assert_eq!(peaks, vec![(7, 7), (13, 7)]);
        assert_eq!(local_maxima(s.channel(0), 21, 15), peaks);
    }

    #[test]
    fn separable_matches_direct_convolution() {
        let data: Vec<f32> = (0..11 * 13).map(|i| ((i * 37) % 17) as f32 / 17.0).collect();
        let f = DenseField::from_vec(11, 13, 1, data).unwrap();
        for sigma in [0.3, 0.7, 1.0, 1.6] {
            let s = smooth_gaussian(&f, &[sigma]).unwrap();
            let oracle = dense_direct(&f, sigma);
            for (a, b) in s.data().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-5, "sigma {sigma}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn sigma_list_must_match_channels() {
        let f = DenseField::zeros(4, 4, 2);
        assert!(matches!(
            smooth_gaussian(&f, &[1.0]),
            Err(KdcError::ShapeMismatch { .. })
        ));
        assert!(smooth_gaussian(&f, &[1.0, -1.0]).is_err());
    }

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(DenseField::from_vec(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(DenseField::from_vec(1, 1, 1, vec![f32::NAN]).is_err());
    }

    #[test]
    fn mask_components_and_centroid() {
        let mut m = BinaryMask::new(5, 5);
        m.set(0, 0, true);
        m.set(1, 1, true);
        assert_eq!(m.component_count(), 2);
        m.set(1, 0, true);
        assert_eq!(m.component_count(), 1);
        let c = m.centroid().unwrap();
        assert!((c.x - 2.0 / 3.0).abs() < 1e-12 && (c.y - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.bbox(), Some((0, 0, 1, 1)));
    }

    proptest! {
        #[test]
        fn disk_translation_invariant(px in -50i32..50, py in -50i32..50, qx in -50.0f64..50.0,
                                      qy in -50.0f64..50.0, tx in -100i32..100, ty in -100i32..100,
                                      r in 0.5f64..40.0) {
            let a = disk_contains(GridPoint::new(px, py), SubPixel::new(qx, qy), r).unwrap();
            let b = disk_contains(GridPoint::new(px + tx, py + ty),
                                  SubPixel::new(qx + tx as f64, qy + ty as f64), r).unwrap();
            // Translation by integers is exact in f64 for these magnitudes except at the rim.
            let d = ((px as f64 - qx).powi(2) + (py as f64 - qy).powi(2)).sqrt();
            prop_assume!((d - r).abs() > 1e-9);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn kernel_radially_symmetric(x in -5.0f64..5.0, y in -5.0f64..5.0, s in 0.1f64..3.0) {
            let g = gaussian_kernel(x, y, s).unwrap();
            prop_assert!((g - gaussian_kernel(-x, -y, s).unwrap()).abs() <= 1e-15);
            prop_assert!((g - gaussian_kernel(y, x, s).unwrap()).abs() <= 1e-15);
        }

        #[test]
        fn kernel_decreases_with_radius(r1 in 0.0f64..5.0, dr in 0.001f64..5.0, s in 0.1f64..3.0) {
            let a = gaussian_kernel(r1, 0.0, s).unwrap();
            let b = gaussian_kernel(r1 + dr, 0.0, s).unwrap();
            prop_assert!(b <= a);
        }

        #[test]
        fn smoothing_is_linear(seed_a in proptest::collection::vec(-1.0f32..1.0, 64),
                               seed_b in proptest::collection::vec(-1.0f32..1.0, 64),
                               a in -2.0f32..2.0, b in -2.0f32..2.0, sigma in 0.1f64..2.0) {
            let f = DenseField::from_vec(8, 8, 1, seed_a).unwrap();
            let g = DenseField::from_vec(8, 8, 1, seed_b).unwrap();
            let combo: Vec<f32> = f.data().iter().zip(g.data()).map(|(x, y)| a * x + b * y).collect();
            let combo = DenseField::from_vec(8, 8, 1, combo).unwrap();
            let lhs = smooth_gaussian(&combo, &[sigma]).unwrap();
            let sf = smooth_gaussian(&f, &[sigma]).unwrap();
            let sg = smooth_gaussian(&g, &[sigma]).unwrap();
            for i in 0..64 {
                let rhs = a * sf.data()[i] + b * sg.data()[i];
                prop_assert!((lhs.data()[i] - rhs).abs() < 1e-5);
            }
        }

        #[test]
        fn small_sigma_keeps_single_peak(px in 2usize..14, py in 2usize..14, amp in 0.1f32..5.0,
                                         sigma in 0.1f64..=1.0) {
            let mut f = DenseField::zeros(16, 16, 1);
            // Single peak with a radially decaying skirt.
            for y in 0..16 {
                for x in 0..16 {
                    let d2 = (x as f32 - px as f32).powi(2) + (y as f32 - py as f32).powi(2);
                    f.set(0, x, y, amp * (-d2 / 8.0).exp());
                }
            }
            let before = f.argmax(0);
            let s = smooth_gaussian(&f, &[sigma]).unwrap();
            prop_assert_eq!(s.argmax(0), before);
        }
    }
}
