//! Video snapshot compressive sensing model.
//!
//! `B` frames are modulated by binary masks and summed into one snapshot:
//! `Y = sum_b I_b * C_b + G`. Stacking the frames into `s = [vec(I_1); ...;
//! vec(I_B)]` gives `y = Phi s + g` with `Phi = [D_1, ..., D_B]` and
//! `D_b = diag(vec(C_b))`. `Phi` is never materialized: both it and its
//! adjoint are element-wise multiply-accumulates over the mask stack.
//!
//! Masks and noise come from ChaCha20 (`rand_chacha`) seeded with
//! `seed_from_u64`, so stacks are reproducible across platforms.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Dims, Frame, FrameSequence};
use crate::rawio;

/// Largest supported compression ratio.
pub const MAX_COMPRESSION_RATIO: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    /// Frames per snapshot (`B`).
    pub compression_ratio: usize,
    pub mask_density: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Snapshots per second.
    pub frame_rate: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self { compression_ratio: 8, mask_density: 0.5, noise_sigma: 0.0, seed: 1, frame_rate: 24.0 }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(1..=MAX_COMPRESSION_RATIO).contains(&self.compression_ratio) {
            return bad(format!("compression ratio {} outside 1..={MAX_COMPRESSION_RATIO}", self.compression_ratio));
        }
        if !(self.mask_density > 0.0 && self.mask_density < 1.0) {
            return bad(format!("mask density {} outside (0, 1)", self.mask_density));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {} must be >= 0", self.noise_sigma));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return bad(format!("frame rate {} must be > 0", self.frame_rate));
        }
        Ok(())
    }
}

/// `B` binary modulation patterns plus their per-pixel sum.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskStack {
    masks: Vec<Array2<u8>>,
    sum: Array2<u32>,
    seed: u64,
    density: f64,
}

impl MaskStack {
    /// Wraps explicit masks. Entries must be 0 or 1.
    pub fn from_masks(masks: Vec<Array2<u8>>, seed: u64, density: f64) -> Result<Self> {
        let first = masks.first().ok_or_else(|| Error::ShapeMismatch("mask stack is empty".into()))?;
        let dims = first.dim();
        let mut sum = Array2::<u32>::zeros(dims);
        for m in &masks {
            if m.dim() != dims {
                return Err(Error::DimensionMismatch { expected: dims, found: m.dim() });
            }
            if m.iter().any(|&v| v > 1) {
                return Err(Error::InvalidConfig("mask entries must be 0 or 1".into()));
            }
            Zip::from(&mut sum).and(m).for_each(|s, &v| *s += v as u32);
        }
        Ok(Self { masks, sum, seed, density })
    }

    pub fn masks(&self) -> &[Array2<u8>] {
        &self.masks
    }

    /// Frames per snapshot.
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn dims(&self) -> Dims {
        let (h, w) = self.sum.dim();
        Dims::new(h, w)
    }

    /// `sum_b C_b(x, y)`, which is also the diagonal of `Phi Phi^T`.
    pub fn mask_sum(&self) -> &Array2<u32> {
        &self.sum
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    /// Fraction of ones over the whole stack.
    pub fn ones_fraction(&self) -> f64 {
        let ones: u64 = self.sum.iter().map(|&v| v as u64).sum();
        ones as f64 / (self.len() * self.dims().pixels()) as f64
    }
}

/// Draws i.i.d. Bernoulli(`mask_density`) masks.
pub fn generate_masks(cfg: &SensorConfig, dims: Dims) -> Result<MaskStack> {
    cfg.validate()?;
    if dims.pixels() == 0 {
        return Err(Error::InvalidConfig("mask dimensions must be non-zero".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let masks = (0..cfg.compression_ratio)
        .map(|_| Array2::from_shape_simple_fn(dims.shape(), || rng.random_bool(cfg.mask_density) as u8))
        .collect();
    MaskStack::from_masks(masks, cfg.seed, cfg.mask_density)
}

/// A coded measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub data: Frame,
    pub noise_sigma: f64,
    pub normalized: bool,
}

/// Forms `Y = sum_b I_b * C_b + G` with `G ~ N(0, noise_sigma^2)` drawn from
/// ChaCha20 keyed by `seed`.
pub fn encode(seq: &FrameSequence, masks: &MaskStack, noise_sigma: f64, seed: u64) -> Result<Snapshot> {
    if seq.count() != masks.len() {
        return Err(Error::ShapeMismatch(format!("{} frames for {} masks", seq.count(), masks.len())));
    }
    check_dims(seq.dims(), masks.dims())?;
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise sigma {noise_sigma} must be >= 0")));
    }
    let mut data = masks.dims().zeros();
    for (frame, mask) in seq.frames().iter().zip(masks.masks()) {
        Zip::from(&mut data).and(frame).and(mask).for_each(|y, &i, &c| *y += i * c as f64);
    }
    if noise_sigma > 0.0 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sigma).expect("sigma checked");
        data.iter_mut().for_each(|y| *y += normal.sample(&mut rng));
    }
    Ok(Snapshot { data, noise_sigma, normalized: false })
}

fn check_dims(found: Dims, expected: Dims) -> Result<()> {
    if found != expected {
        return Err(Error::DimensionMismatch { expected: expected.shape(), found: found.shape() });
    }
    Ok(())
}

/// `y = Phi s` for a stacked, row-major signal of length `n * B`.
pub fn phi_apply(signal: &[f64], masks: &MaskStack) -> Result<Vec<f64>> {
    let n = masks.dims().pixels();
    if signal.len() != n * masks.len() {
        return Err(Error::ShapeMismatch(format!("signal length {} != {} * {}", signal.len(), n, masks.len())));
    }
    let mut y = vec![0.0; n];
    for (block, mask) in signal.chunks_exact(n).zip(masks.masks()) {
        let mask = mask.as_slice().expect("masks are standard layout");
        for ((yi, &s), &c) in y.iter_mut().zip(block).zip(mask) {
            if c != 0 {
                *yi += s;
            }
        }
    }
    Ok(y)
}

/// `Phi^T y`: the measurement replicated into each frame slot and masked.
pub fn phi_adjoint(measurement: &[f64], masks: &MaskStack) -> Result<Vec<f64>> {
    let n = masks.dims().pixels();
    if measurement.len() != n {
        return Err(Error::ShapeMismatch(format!("measurement length {} != {n}", measurement.len())));
    }
    let mut out = Vec::with_capacity(n * masks.len());
    for mask in masks.masks() {
        let mask = mask.as_slice().expect("masks are standard layout");
        out.extend(measurement.iter().zip(mask).map(|(&y, &c)| if c != 0 { y } else { 0.0 }));
    }
    Ok(out)
}

/// Divides the snapshot by the per-pixel mask sum; pixels no mask covers
/// become 0.
pub fn normalize_measurement(snap: &Snapshot, masks: &MaskStack) -> Result<Snapshot> {
    if snap.normalized {
        return Err(Error::AlreadyNormalized);
    }
    check_dims(Dims::of(&snap.data), masks.dims())?;
    let data =
        Zip::from(&snap.data).and(masks.mask_sum()).map_collect(|&y, &s| if s == 0 { 0.0 } else { y / s as f64 });
    Ok(Snapshot { data, noise_sigma: snap.noise_sigma, normalized: true })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskHeader {
    pub width: usize,
    pub height: usize,
    #[serde(rename = "B")]
    pub frames: usize,
    pub density: f64,
    pub seed: u64,
}

/// Packs masks as a little-endian bit stream (bit `i` of the stream is bit
/// `i % 8` of byte `i / 8`), row-major within a mask, masks in order.
pub fn write_masks(masks: &MaskStack, path: &Path) -> Result<()> {
    let bits: Vec<u8> = masks.masks().iter().flat_map(|m| m.iter().copied()).collect();
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        bytes[i / 8] |= b << (i % 8);
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let dims = masks.dims();
    rawio::write_json(
        &rawio::sidecar_path(path),
        &MaskHeader {
            width: dims.width,
            height: dims.height,
            frames: masks.len(),
            density: masks.density(),
            seed: masks.seed(),
        },
    )
}

pub fn read_masks(path: &Path) -> Result<MaskStack> {
    let header: MaskHeader = rawio::read_json(&rawio::sidecar_path(path))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let n = header.width * header.height;
    let total = n * header.frames;
    if bytes.len() != total.div_ceil(8) {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: format!("expected {} bytes of mask bits, found {}", total.div_ceil(8), bytes.len()),
        });
    }
    let bit = |i: usize| (bytes[i / 8] >> (i % 8)) & 1;
    let masks = (0..header.frames)
        .map(|b| Array2::from_shape_fn((header.height, header.width), |(r, c)| bit(b * n + r * header.width + c)))
        .collect();
    MaskStack::from_masks(masks, header.seed, header.density)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub width: usize,
    pub height: usize,
    pub noise_sigma: f64,
    pub normalized: bool,
}

/// Stores the snapshot as a single raw_f32 plane.
pub fn write_snapshot(snap: &Snapshot, path: &Path) -> Result<()> {
    let dims = Dims::of(&snap.data);
    rawio::write_f32_planes(path, std::slice::from_ref(&snap.data))?;
    rawio::write_json(
        &rawio::sidecar_path(path),
        &SnapshotHeader {
            width: dims.width,
            height: dims.height,
            noise_sigma: snap.noise_sigma,
            normalized: snap.normalized,
        },
    )
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let header: SnapshotHeader = rawio::read_json(&rawio::sidecar_path(path))?;
    let mut planes = rawio::read_f32_planes(path, 1, Dims::new(header.height, header.width))?;
    Ok(Snapshot {
        data: planes.pop().expect("one plane"),
        noise_sigma: header.noise_sigma,
        normalized: header.normalized,
    })
}
