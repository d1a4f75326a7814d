//! Patch-wise similarity registration of event images onto coded
//! measurements.
//!
//! The target is the gradient magnitude of the normalized snapshot; the
//! moving image is the absolute accumulated event image, resized to the
//! snapshot resolution. The transform maximizing normalized
//! cross-correlation is found by an exhaustive sweep on the coarsest level of
//! a 3-level pyramid, a local sweep on the middle level and greedy refinement
//! at full resolution.
//!
//! A transform acts on `(x, y) = (col, row)` about the image centre `c`:
//! `T(p) = scale * R(rotation) * (p - c) + c + (dx, dy)`. Warping an image by
//! `T` moves its content by `T`.

use std::path::Path;

use ndarray::{s, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{sample_bilinear, Dims, Frame};
use crate::rawio;
use crate::repr::{EventImage, EventVoxelGrid};

/// Smallest patch side the estimator accepts.
pub const MIN_PATCH: usize = 32;
const FLAT_VARIANCE: f64 = 1e-8;
const SCORE_TIE: f64 = 1e-12;
const COARSE_CANDIDATES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    /// Radians, counter-clockwise in `(x, y)`.
    pub rotation: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl SimilarityTransform {
    pub const IDENTITY: Self = Self { scale: 1.0, rotation: 0.0, dx: 0.0, dy: 0.0 };

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self { dx, dy, ..Self::IDENTITY }
    }

    /// Maps a point given relative to the centre.
    fn linear(&self, x: f64, y: f64) -> (f64, f64) {
        let (sin, cos) = self.rotation.sin_cos();
        (self.scale * (cos * x - sin * y), self.scale * (sin * x + cos * y))
    }

    pub fn apply(&self, p: (f64, f64), centre: (f64, f64)) -> (f64, f64) {
        let (x, y) = self.linear(p.0 - centre.0, p.1 - centre.1);
        (x + centre.0 + self.dx, y + centre.1 + self.dy)
    }

    pub fn inverse(&self) -> Self {
        let inv = Self { scale: 1.0 / self.scale, rotation: -self.rotation, dx: 0.0, dy: 0.0 };
        let (tx, ty) = inv.linear(self.dx, self.dy);
        Self { dx: -tx, dy: -ty, ..inv }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let (tx, ty) = self.linear(other.dx, other.dy);
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation + other.rotation,
            dx: tx + self.dx,
            dy: ty + self.dy,
        }
    }

    fn tie_key(&self) -> [f64; 4] {
        [self.dx.abs(), self.dy.abs(), self.rotation.abs(), (self.scale - 1.0).abs()]
    }
}

fn centre(dims: Dims) -> (f64, f64) {
    ((dims.width as f64 - 1.0) / 2.0, (dims.height as f64 - 1.0) / 2.0)
}

/// Pull-back warp with bilinear sampling; samples outside `img` read 0.
/// Centres of input and output are aligned.
pub fn warp_image(img: &Frame, tf: &SimilarityTransform, out: Dims) -> Frame {
    let inv = tf.inverse();
    let c_out = centre(out);
    let c_in = centre(Dims::of(img));
    Frame::from_shape_fn(out.shape(), |(r, c)| {
        let (x, y) = inv.apply((c as f64, r as f64), c_out);
        sample_bilinear(img, y + c_in.1 - c_out.1, x + c_in.0 - c_out.0, 0.0)
    })
}

/// Warps each bin, dividing by `scale^2` so event mass is preserved.
pub fn warp_voxels(grid: &EventVoxelGrid, tf: &SimilarityTransform, out: Dims) -> EventVoxelGrid {
    let jacobian = 1.0 / (tf.scale * tf.scale);
    let planes: Vec<Frame> =
        (0..grid.n_bins()).into_par_iter().map(|i| warp_image(&grid.bin(i), tf, out) * jacobian).collect();
    let mut bins = Array3::zeros((planes.len(), out.height, out.width));
    for (i, p) in planes.iter().enumerate() {
        bins.index_axis_mut(Axis(0), i).assign(p);
    }
    EventVoxelGrid { bins, t_a: grid.t_a, t_b: grid.t_b }
}

/// Central-difference gradient magnitude, one-sided at the borders.
pub fn gradient_magnitude(img: &Frame) -> Frame {
    let (h, w) = img.dim();
    let diff = |lo: usize, hi: usize, a: f64, b: f64| if hi > lo { (b - a) / (hi - lo) as f64 } else { 0.0 };
    Frame::from_shape_fn((h, w), |(r, c)| {
        let (c0, c1) = (c.saturating_sub(1), (c + 1).min(w - 1));
        let (r0, r1) = (r.saturating_sub(1), (r + 1).min(h - 1));
        let gx = diff(c0, c1, img[[r, c0]], img[[r, c1]]);
        let gy = diff(r0, r1, img[[r0, c]], img[[r1, c]]);
        gx.hypot(gy)
    })
}

/// Normalized cross-correlation; `None` when either input is flat.
pub fn ncc(a: &Frame, b: &Frame) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// NCC between `target` and `moving` warped by `tf`, restricted to target
/// pixels whose pre-image lies inside `moving`. Both images share a size.
fn overlap_ncc(moving: &Frame, target: &Frame, tf: &SimilarityTransform) -> Option<f64> {
    let (h, w) = target.dim();
    let (cx, cy) = centre(Dims::new(h, w));
    let inv = tf.inverse();
    // pre-image of (c, r) is origin + c * col_step + r * row_step
    let (ax, ay) = inv.linear(1.0, 0.0);
    let (bx, by) = inv.linear(0.0, 1.0);
    let (ox, oy) = inv.apply((0.0, 0.0), (cx, cy));
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    let mov = moving.as_slice().expect("standard layout");
    let tgt = target.as_slice().expect("standard layout");
    let (mut n, mut sa, mut sb, mut sab, mut saa, mut sbb) = (0usize, 0.0, 0.0, 0.0, 0.0, 0.0);
    for r in 0..h {
        let (rx, ry) = (ox + r as f64 * bx, oy + r as f64 * by);
        for c in 0..w {
            let x = rx + c as f64 * ax;
            let y = ry + c as f64 * ay;
            if !(x >= 0.0 && y >= 0.0 && x <= xmax && y <= ymax) {
                continue;
            }
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            let (x0, y0) = (x0 as usize, y0 as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let top = mov[y0 * w + x0] + fx * (mov[y0 * w + x1] - mov[y0 * w + x0]);
            let bottom = mov[y1 * w + x0] + fx * (mov[y1 * w + x1] - mov[y1 * w + x0]);
            let a = top + fy * (bottom - top);
            let b = tgt[r * w + c];
            n += 1;
            sa += a;
            sb += b;
            sab += a * b;
            saa += a * a;
            sbb += b * b;
        }
    }
    if n < 16 {
        return None;
    }
    let nf = n as f64;
    let cov = sab - sa * sb / nf;
    let va = saa - sa * sa / nf;
    let vb = sbb - sb * sb / nf;
    (va > 0.0 && vb > 0.0).then(|| (cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

fn variance(a: &Frame) -> f64 {
    let n = a.len() as f64;
    let m = a.sum() / n;
    a.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
}

/// Search ranges and step sizes. Translations are in full-resolution pixels,
/// rotations in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub translation_range: f64,
    pub translation_step: f64,
    pub translation_fine: f64,
    pub rotation_range_deg: f64,
    pub rotation_step_deg: f64,
    pub rotation_fine_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub scale_step: f64,
    pub scale_fine: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            translation_range: 16.0,
            translation_step: 1.0,
            translation_fine: 0.25,
            rotation_range_deg: 5.0,
            rotation_step_deg: 1.0,
            rotation_fine_deg: 0.1,
            scale_min: 0.9,
            scale_max: 1.1,
            scale_step: 0.02,
            scale_fine: 0.005,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.translation_step,
            self.translation_fine,
            self.rotation_step_deg,
            self.rotation_fine_deg,
            self.scale_step,
            self.scale_fine,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite()))
            || !(self.translation_range >= 0.0 && self.rotation_range_deg >= 0.0)
            || !(0.5..=self.scale_max).contains(&self.scale_min)
            || self.scale_max > 2.0
        {
            return Err(Error::InvalidConfig(format!("invalid registration search {self:?}")));
        }
        Ok(())
    }

    fn clamp(&self, tf: SimilarityTransform) -> SimilarityTransform {
        let rot = self.rotation_range_deg.to_radians();
        SimilarityTransform {
            scale: tf.scale.clamp(self.scale_min, self.scale_max),
            rotation: tf.rotation.clamp(-rot, rot),
            dx: tf.dx.clamp(-self.translation_range, self.translation_range),
            dy: tf.dy.clamp(-self.translation_range, self.translation_range),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub transform: SimilarityTransform,
    pub score: f64,
    /// `(x, y)` of the patch's top-left corner.
    pub patch_origin: (usize, usize),
    pub patch_size: usize,
}

#[derive(Clone, Copy)]
struct Candidate {
    tf: SimilarityTransform,
    score: f64,
}

impl Candidate {
    fn beats(&self, other: &Candidate) -> bool {
        if self.score > other.score + SCORE_TIE {
            return true;
        }
        if self.score < other.score - SCORE_TIE {
            return false;
        }
        self.tf.tie_key() < other.tf.tie_key()
    }
}

fn downsample(img: &Frame) -> Frame {
    let (h, w) = img.dim();
    Frame::from_shape_fn((h / 2, w / 2), |(r, c)| img.slice(s![2 * r..2 * r + 2, 2 * c..2 * c + 2]).sum() / 4.0)
}

struct Level {
    target: Frame,
    moving: Frame,
    /// Full-resolution pixels per level pixel.
    factor: f64,
}

impl Level {
    fn score(&self, tf: &SimilarityTransform) -> f64 {
        let scaled = SimilarityTransform { dx: tf.dx / self.factor, dy: tf.dy / self.factor, ..*tf };
        overlap_ncc(&self.moving, &self.target, &scaled).unwrap_or(-1.0)
    }

    /// Scores every transform; the reduction runs in input order so the
    /// winner does not depend on thread scheduling.
    fn sweep(&self, grid: Vec<SimilarityTransform>) -> Vec<Candidate> {
        grid.into_par_iter().map(|tf| Candidate { tf, score: self.score(&tf) }).collect()
    }
}

fn steps(centre: f64, half_width: f64, step: f64) -> Vec<f64> {
    let n = (half_width / step + 1e-9).floor() as i64;
    (-n..=n).map(|k| centre + k as f64 * step).collect()
}

fn grid(
    cfg: &SearchConfig,
    around: &SimilarityTransform,
    t: (f64, f64),
    rot_deg: (f64, f64),
    scale: (f64, f64),
) -> Vec<SimilarityTransform> {
    let mut out = Vec::new();
    for &dx in &steps(around.dx, t.0, t.1) {
        for &dy in &steps(around.dy, t.0, t.1) {
            for &rot in &steps(around.rotation.to_degrees(), rot_deg.0, rot_deg.1) {
                for &sc in &steps(around.scale, scale.0, scale.1) {
                    let tf = SimilarityTransform { scale: sc, rotation: rot.to_radians(), dx, dy };
                    let clamped = cfg.clamp(tf);
                    let inside = (clamped.dx - dx).abs() < 1e-9
                        && (clamped.dy - dy).abs() < 1e-9
                        && (clamped.rotation - tf.rotation).abs() < 1e-9
                        && (clamped.scale - sc).abs() < 1e-9;
                    if inside {
                        out.push(clamped);
                    }
                }
            }
        }
    }
    out
}

fn best(cands: &[Candidate]) -> Candidate {
    let mut top = cands[0];
    for c in &cands[1..] {
        if c.beats(&top) {
            top = *c;
        }
    }
    top
}

/// Estimates the transform aligning `moving` (an event image) to the
/// gradient magnitude of `fixed` (a normalized measurement patch of the same
/// size).
pub fn estimate_similarity(moving: &EventImage, fixed: &Frame, cfg: &SearchConfig) -> Result<RegistrationResult> {
    cfg.validate()?;
    let dims = Dims::of(fixed);
    if Dims::of(&moving.data) != dims {
        return Err(Error::DimensionMismatch { expected: dims.shape(), found: moving.data.dim() });
    }
    if dims.height < MIN_PATCH || dims.width < MIN_PATCH {
        return Err(Error::TooSmall { required: (MIN_PATCH, MIN_PATCH), found: dims.shape() });
    }
    let target = gradient_magnitude(fixed);
    let mov = moving.data.mapv(f64::abs);
    if variance(&target) < FLAT_VARIANCE {
        return Err(Error::NoSignal("fixed patch has no gradient structure".into()));
    }
    if variance(&mov) < FLAT_VARIANCE {
        return Err(Error::NoSignal("event image is flat".into()));
    }

    let mut levels = vec![Level { target, moving: mov, factor: 1.0 }];
    for _ in 1..3 {
        let prev = levels.last().expect("one level");
        levels.push(Level {
            target: downsample(&prev.target),
            moving: downsample(&prev.moving),
            factor: prev.factor * 2.0,
        });
    }

    // coarse: exhaustive over the full range, one level pixel per step
    let coarse = &levels[2];
    let start = SimilarityTransform { scale: (cfg.scale_min + cfg.scale_max) / 2.0, ..SimilarityTransform::IDENTITY };
    let mut cands = coarse.sweep(grid(
        cfg,
        &start,
        (cfg.translation_range, cfg.translation_step * coarse.factor),
        (cfg.rotation_range_deg, cfg.rotation_step_deg),
        ((cfg.scale_max - cfg.scale_min) / 2.0, cfg.scale_step),
    ));
    cands.sort_by(|a, b| {
        b.score.total_cmp(&a.score).then_with(|| a.tf.tie_key().partial_cmp(&b.tf.tie_key()).expect("finite keys"))
    });
    cands.truncate(COARSE_CANDIDATES);

    // middle: local sweep around each coarse candidate
    let middle = &levels[1];
    let refined: Vec<Candidate> = cands
        .iter()
        .map(|c| {
            best(&middle.sweep(grid(
                cfg,
                &c.tf,
                (2.0 * middle.factor * cfg.translation_step, middle.factor * cfg.translation_step),
                (cfg.rotation_step_deg, cfg.rotation_step_deg / 2.0),
                (cfg.scale_step, cfg.scale_step / 2.0),
            )))
        })
        .collect();
    let mut current = best(&refined);

    // fine: greedy 3^4 neighbourhood moves with shrinking steps
    let fine = &levels[0];
    current = Candidate { tf: current.tf, score: fine.score(&current.tf) };
    let schedule = [
        (cfg.translation_step, cfg.rotation_step_deg / 2.0, cfg.scale_step / 2.0),
        (cfg.translation_step / 2.0, cfg.rotation_fine_deg * 2.5, cfg.scale_fine),
        (cfg.translation_fine, cfg.rotation_fine_deg, cfg.scale_fine),
    ];
    for (t, r, sc) in schedule {
        for _ in 0..32 {
            let next = best(&fine.sweep(grid(cfg, &current.tf, (t, t), (r, r), (sc, sc))));
            if next.beats(&current) && next.tf != current.tf {
                current = next;
            } else {
                break;
            }
        }
    }

    Ok(RegistrationResult {
        transform: current.tf,
        score: current.score,
        patch_origin: (0, 0),
        patch_size: dims.height.min(dims.width),
    })
}

/// Top-left corners tiling `[0, len)` with windows of `size`; the last window
/// is pulled back to stay inside.
fn tile_origins(len: usize, size: usize) -> Vec<usize> {
    if size >= len {
        return vec![0];
    }
    let mut out: Vec<usize> = (0..len - size).step_by(size).collect();
    out.push(len - size);
    out.dedup();
    out
}

/// Registers an event image (already at snapshot resolution) against a
/// normalized snapshot patch by patch. Patches larger than the image shrink
/// to the image. Flat patches keep the identity with score 0.
pub fn register_patches(
    event_image: &Frame,
    normalized: &Frame,
    patch_size: usize,
    cfg: &SearchConfig,
) -> Result<Vec<RegistrationResult>> {
    let dims = Dims::of(normalized);
    if Dims::of(event_image) != dims {
        return Err(Error::DimensionMismatch { expected: dims.shape(), found: event_image.dim() });
    }
    let size = patch_size.min(dims.height).min(dims.width);
    let mut origins = Vec::new();
    for &y in &tile_origins(dims.height, size) {
        for &x in &tile_origins(dims.width, size) {
            origins.push((x, y));
        }
    }
    origins
        .into_par_iter()
        .map(|(x, y)| {
            let window = s![y..y + size, x..x + size];
            let moving = EventImage { data: event_image.slice(window).to_owned() };
            let fixed = normalized.slice(window).to_owned();
            let mut res = match estimate_similarity(&moving, &fixed, cfg) {
                Err(Error::NoSignal(_)) => RegistrationResult {
                    transform: SimilarityTransform::IDENTITY,
                    score: 0.0,
                    patch_origin: (0, 0),
                    patch_size: size,
                },
                other => other?,
            };
            res.patch_origin = (x, y);
            res.patch_size = size;
            Ok(res)
        })
        .collect()
}

/// Applies per-patch transforms to a map in snapshot geometry, preserving
/// event mass within each patch.
pub fn apply_patch_transforms(map: &Frame, patches: &[RegistrationResult]) -> Frame {
    let mut out = map.clone();
    for p in patches {
        let (x, y) = p.patch_origin;
        let window = s![y..y + p.patch_size, x..x + p.patch_size];
        let crop = map.slice(window).to_owned();
        let jacobian = 1.0 / (p.transform.scale * p.transform.scale);
        let warped = warp_image(&crop, &p.transform, Dims::of(&crop)) * jacobian;
        out.slice_mut(window).assign(&warped);
    }
    out
}

/// One persisted registration entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationRecord {
    pub patch_origin: (usize, usize),
    pub patch_size: usize,
    pub scale: f64,
    pub rotation_rad: f64,
    pub dx: f64,
    pub dy: f64,
    pub ncc: f64,
}

impl From<&RegistrationResult> for RegistrationRecord {
    fn from(r: &RegistrationResult) -> Self {
        Self {
            patch_origin: r.patch_origin,
            patch_size: r.patch_size,
            scale: r.transform.scale,
            rotation_rad: r.transform.rotation,
            dx: r.transform.dx,
            dy: r.transform.dy,
            ncc: r.score,
        }
    }
}

impl From<&RegistrationRecord> for RegistrationResult {
    fn from(r: &RegistrationRecord) -> Self {
        Self {
            transform: SimilarityTransform { scale: r.scale, rotation: r.rotation_rad, dx: r.dx, dy: r.dy },
            score: r.ncc,
            patch_origin: r.patch_origin,
            patch_size: r.patch_size,
        }
    }
}

pub fn write_registration(path: &Path, results: &[RegistrationResult]) -> Result<()> {
    let records: Vec<RegistrationRecord> = results.iter().map(RegistrationRecord::from).collect();
    rawio::write_json(path, &records)
}

pub fn read_registration(path: &Path) -> Result<Vec<RegistrationResult>> {
    let records: Vec<RegistrationRecord> = rawio::read_json(path)?;
    Ok(records.iter().map(RegistrationResult::from).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn textured(size: usize, seed: u64) -> Frame {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let blobs: Vec<(f64, f64, f64, f64)> = (0..40)
            .map(|_| {
                (
                    rng.random_range(0.0..size as f64),
                    rng.random_range(0.0..size as f64),
                    rng.random_range(2.5..7.0),
                    rng.random_range(0.05..0.3),
                )
            })
            .collect();
        Frame::from_shape_fn((size, size), |(r, c)| {
            let v = blobs.iter().fold(0.1, |acc, &(x, y, s, a)| {
                let d2 = (c as f64 - x).powi(2) + (r as f64 - y).powi(2);
                acc + a * (-d2 / (2.0 * s * s)).exp()
            });
            v.min(1.0)
        })
    }

    fn smooth(size: usize) -> Frame {
        Frame::from_shape_fn((size, size), |(r, c)| 0.5 + 0.3 * (r as f64 * 0.11).sin() * (c as f64 * 0.07).cos())
    }

    fn close(a: &SimilarityTransform, b: &SimilarityTransform, tol: f64) -> bool {
        (a.scale - b.scale).abs() < tol
            && (a.rotation - b.rotation).abs() < tol
            && (a.dx - b.dx).abs() < tol
            && (a.dy - b.dy).abs() < tol
    }

    #[test]
    fn inverse_and_compose() {
        let t = SimilarityTransform { scale: 1.07, rotation: 0.05, dx: 3.5, dy: -2.25 };
        assert!(close(&t.compose(&t.inverse()), &SimilarityTransform::IDENTITY, 1e-9));
        assert!(close(&t.inverse().compose(&t), &SimilarityTransform::IDENTITY, 1e-9));
        let u = SimilarityTransform { scale: 0.95, rotation: -0.02, dx: -1.0, dy: 4.0 };
        let p = (7.0, -3.0);
        let c = (10.0, 12.0);
        let (a, b) = t.compose(&u).apply(p, c);
        let (x, y) = t.apply(u.apply(p, c), c);
        assert!((a - x).abs() < 1e-9 && (b - y).abs() < 1e-9);
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = textured(40, 3);
        let out = warp_image(&img, &SimilarityTransform::IDENTITY, Dims::of(&img));
        assert!(out.iter().zip(img.iter()).all(|(a, b)| (a - b).abs() <= 1e-6));
    }

    #[test]
    fn integer_translation_is_an_index_shift() {
        let img = textured(32, 4);
        let out = warp_image(&img, &SimilarityTransform::translation(2.0, 0.0), Dims::of(&img));
        for r in 0..32 {
            for c in 0..32 {
                let want = if c >= 2 { img[[r, c - 2]] } else { 0.0 };
                assert!((out[[r, c]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn warp_round_trip_on_smooth_content() {
        let img = smooth(64);
        let t = SimilarityTransform { scale: 1.05, rotation: 0.04, dx: 1.5, dy: -1.0 };
        let back = warp_image(&warp_image(&img, &t, Dims::of(&img)), &t.inverse(), Dims::of(&img));
        // Borders lose content to zero fill; compare the interior.
        let (mut err, mut norm) = (0.0, 0.0);
        for r in 12..52 {
            for c in 12..52 {
                err += (back[[r, c]] - img[[r, c]]).powi(2);
                norm += img[[r, c]].powi(2);
            }
        }
        assert!((err / norm).sqrt() < 0.01);
    }

    #[test]
    fn warp_is_linear() {
        let a = textured(32, 5);
        let b = smooth(32);
        let t = SimilarityTransform { scale: 0.97, rotation: -0.03, dx: 0.4, dy: 1.3 };
        let d = Dims::of(&a);
        let lhs = warp_image(&(&a * 2.0 + &b * -0.5), &t, d);
        let rhs = warp_image(&a, &t, d) * 2.0 + warp_image(&b, &t, d) * -0.5;
        assert!(lhs.iter().zip(rhs.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn voxel_warp_preserves_mass() {
        let mut bins = Array3::zeros((2, 64, 64));
        for r in 20..44 {
            for c in 20..44 {
                bins[[0, r, c]] = 1.0;
                bins[[1, r, c]] = -0.5;
            }
        }
        let grid = EventVoxelGrid { bins, t_a: 0, t_b: 1000 };
        let t = SimilarityTransform { scale: 1.08, rotation: 0.06, dx: 2.0, dy: -3.0 };
        let warped = warp_voxels(&grid, &t, grid.dims());
        for i in 0..2 {
            let (m0, m1) = (grid.bin(i).sum(), warped.bin(i).sum());
            assert!(((m1 - m0) / m0).abs() < 0.02, "bin {i}: {m0} -> {m1}");
        }
    }

    #[test]
    fn self_registration_is_identity() {
        let fixed = textured(64, 6);
        let moving = EventImage { data: gradient_magnitude(&fixed) };
        let res = estimate_similarity(&moving, &fixed, &SearchConfig::default()).unwrap();
        assert!(close(&res.transform, &SimilarityTransform::IDENTITY, 1e-9), "{:?}", res.transform);
        assert!(res.score >= 0.999, "{}", res.score);
    }

    #[test]
    fn recovers_a_shift() {
        let fixed = textured(64, 7);
        let grad = gradient_magnitude(&fixed);
        let shift = SimilarityTransform::translation(3.0, -2.0);
        let moving = EventImage { data: warp_image(&grad, &shift, Dims::of(&grad)) };
        let res = estimate_similarity(&moving, &fixed, &SearchConfig::default()).unwrap();
        let want = shift.inverse();
        assert!((res.transform.dx - want.dx).abs() < 0.5 && (res.transform.dy - want.dy).abs() < 0.5);
        assert!(res.score > 0.95, "{}", res.score);
    }

    #[test]
    fn flat_inputs_are_rejected() {
        let fixed = textured(48, 8);
        let moving = EventImage { data: Frame::zeros((48, 48)) };
        assert!(matches!(estimate_similarity(&moving, &fixed, &SearchConfig::default()), Err(Error::NoSignal(_))));
        let small = EventImage { data: Frame::ones((16, 16)) };
        assert!(matches!(
            estimate_similarity(&small, &Frame::ones((16, 16)), &SearchConfig::default()),
            Err(Error::TooSmall { .. })
        ));
    }

    #[test]
    fn registration_records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reg.json");
        let res = vec![RegistrationResult {
            transform: SimilarityTransform { scale: 1.01, rotation: 0.02, dx: -1.25, dy: 0.5 },
            score: 0.93,
            patch_origin: (32, 0),
            patch_size: 32,
        }];
        write_registration(&path, &res).unwrap();
        let back = read_registration(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert!(close(&back[0].transform, &res[0].transform, 1e-12));
        assert_eq!(back[0].patch_origin, (32, 0));
    }
}
