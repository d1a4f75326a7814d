//! PSNR and SSIM.
//!
//! SSIM follows Wang et al. (2004): 11x11 Gaussian window with sigma 1.5,
//! `K1 = 0.01`, `K2 = 0.03`, dynamic range 1, averaged over every window that
//! fits entirely inside the image.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, FrameSequence};

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_same(a: &Frame, b: &Frame) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(())
}

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    check_same(a, b)?;
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// `10 log10(peak^2 / MSE)`; identical frames give `f64::INFINITY`.
pub fn psnr(a: &Frame, b: &Frame, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable 'valid' Gaussian filter.
fn filter_valid(img: &Frame, k: &[f64; WINDOW]) -> Frame {
    let (h, w) = img.dim();
    let (oh, ow) = (h + 1 - WINDOW, w + 1 - WINDOW);
    let rows = Frame::from_shape_fn((h, ow), |(r, c)| (0..WINDOW).map(|i| k[i] * img[[r, c + i]]).sum());
    Frame::from_shape_fn((oh, ow), |(r, c)| (0..WINDOW).map(|i| k[i] * rows[[r + i, c]]).sum())
}

pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_same(a, b)?;
    let (h, w) = a.dim();
    if h < WINDOW || w < WINDOW {
        return Err(Error::TooSmall { required: (WINDOW, WINDOW), found: (h, w) });
    }
    let k = gaussian_kernel();
    let mu_a = filter_valid(a, &k);
    let mu_b = filter_valid(b, &k);
    let aa = filter_valid(&(a * a), &k);
    let bb = filter_valid(&(b * b), &k);
    let ab = filter_valid(&(a * b), &k);
    let c1 = (K1 * 1.0f64).powi(2);
    let c2 = (K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    for ((((&ma, &mb), &saa), &sbb), &sab) in mu_a.iter().zip(&mu_b).zip(&aa).zip(&bb).zip(&ab) {
        let va = saa - ma * ma;
        let vb = sbb - mb * mb;
        let cov = sab - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetric {
    /// `None` when the frames are identical (infinite PSNR).
    pub psnr_db: Option<f64>,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_frame: Vec<FrameMetric>,
    /// Mean over frames with finite PSNR; `None` if there are none.
    pub mean_psnr_db: Option<f64>,
    pub mean_ssim: f64,
    pub frame_count: usize,
    /// Set when infinite-PSNR frames were left out of the PSNR mean.
    pub infinite_psnr_excluded: bool,
}

impl MetricReport {
    pub fn from_frames(per_frame: Vec<FrameMetric>) -> Self {
        let finite: Vec<f64> = per_frame.iter().filter_map(|m| m.psnr_db).collect();
        let frame_count = per_frame.len();
        let mean_psnr_db = (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
        let mean_ssim = per_frame.iter().map(|m| m.ssim).sum::<f64>() / frame_count.max(1) as f64;
        Self { infinite_psnr_excluded: finite.len() < frame_count, per_frame, mean_psnr_db, mean_ssim, frame_count }
    }

    /// One row per frame: `frame,psnr_db,ssim` (`inf` for identical frames).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,psnr_db,ssim\n");
        for (i, m) in self.per_frame.iter().enumerate() {
            let psnr = m.psnr_db.map_or_else(|| "inf".to_string(), |p| format!("{p:.6}"));
            writeln!(out, "{},{psnr},{:.6}", i + 1, m.ssim).expect("writing to a String");
        }
        out
    }
}

pub fn frame_metric(pred: &Frame, gt: &Frame) -> Result<FrameMetric> {
    let p = psnr(pred, gt, 1.0)?;
    Ok(FrameMetric { psnr_db: p.is_finite().then_some(p), ssim: ssim(pred, gt)? })
}

pub fn evaluate_sequence(pred: &FrameSequence, gt: &FrameSequence) -> Result<MetricReport> {
    if pred.count() != gt.count() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted frames for {} ground-truth frames",
            pred.count(),
            gt.count()
        )));
    }
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch { expected: gt.dims().shape(), found: pred.dims().shape() });
    }
    let per_frame =
        pred.frames().iter().zip(gt.frames()).map(|(p, g)| frame_metric(p, g)).collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_frames(per_frame))
}

/// Mean PSNR over a list of frame pairs, treating identical pairs as
/// excluded.
pub fn mean_psnr(pairs: &[(&Frame, &Frame)]) -> Result<f64> {
    let finite: Vec<f64> = pairs
        .iter()
        .map(|(a, b)| psnr(a, b, 1.0))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_finite())
        .collect();
    Ok(finite.iter().sum::<f64>() / finite.len().max(1) as f64)
}
