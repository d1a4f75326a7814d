//! Model-based snapshot decoding with a TV prior and optional event fusion.
//!
//! Both solvers work on the raw (un-normalized) snapshot. Each outer
//! iteration takes a data-consistency step through `Phi`, denoises every
//! frame with anisotropic TV, and, when event evidence is supplied, takes one
//! preconditioned gradient step on the event-consistency penalty
//!
//! ```text
//! C_e = sum_b || ln(I_{b+1} + eps) - ln(I_b + eps) - T * S_{b,b+1} ||^2
//! ```
//!
//! where `S_{b,b+1}` is the signed event count between frames `b` and
//! `b + 1`. The step is scaled by `(I + eps)^2`, which makes it a plain
//! gradient step in the log domain and keeps it bounded at dark pixels.

mod tv;

use std::time::Instant;

use ndarray::Zip;
use serde::{Deserialize, Serialize};

pub use tv::{total_variation, tv_denoise, tv_denoise_frame, tv_objective};

use crate::error::{Error, Result};
use crate::events::EventCameraModel;
use crate::frame::{frames_from_vector, Dims, Frame, FrameSequence};
use crate::repr::{accumulate_image, EventSlice};
use crate::sci::{phi_adjoint, phi_apply, MaskStack, Snapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    GapTv,
    AdmmTv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconSettings {
    pub algorithm: Algorithm,
    pub max_iters: usize,
    /// Stop once `||v_{k+1} - v_k|| / ||v_k||` drops below this.
    pub tol: f64,
    pub tv_weight: f64,
    pub tv_inner_iters: usize,
    /// Weight of the event-consistency step; 0 disables fusion.
    pub event_weight: f64,
    pub admm_rho: f64,
    /// Accelerated GAP (measurement residual fed back across iterations).
    pub acceleration: bool,
}

impl Default for ReconSettings {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::GapTv,
            max_iters: 100,
            tol: 1e-4,
            tv_weight: 0.07,
            tv_inner_iters: 10,
            event_weight: 0.1,
            admm_rho: 0.01,
            acceleration: true,
        }
    }
}

impl ReconSettings {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("tv_weight", self.tv_weight),
            ("event_weight", self.event_weight),
            ("admm_rho", self.admm_rho),
            ("tol", self.tol),
        ];
        if let Some((name, v)) = weights.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig(format!("{name} = {v} must be finite and >= 0")));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub iterations_run: usize,
    /// `||y - Phi s|| / ||y||` after the last iteration.
    pub final_residual: f64,
    pub residual_trace: Vec<f64>,
    /// Seconds. Not serialized so stored reports stay reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub frames: Vec<Frame>,
    pub report: ReconReport,
}

impl Reconstruction {
    pub fn into_sequence(self, frame_interval: f64) -> Result<(FrameSequence, ReconReport)> {
        Ok((FrameSequence::new(self.frames, frame_interval)?, self.report))
    }
}

/// Decodes the `B` coded frames. `events`, when given, must hold the `B - 1`
/// whole-frame slices `E_{b,b+1}` in snapshot geometry.
pub fn reconstruct(
    snap: &Snapshot,
    masks: &MaskStack,
    events: Option<&[EventSlice<'_>]>,
    cam: &EventCameraModel,
    cfg: &ReconSettings,
) -> Result<Reconstruction> {
    let maps = events.map(|slices| event_maps(slices, masks.dims()));
    reconstruct_with_maps(snap, masks, maps.as_deref(), cam, cfg, None)
}

/// Per-slice signed event counts `S_{b,b+1}`.
pub fn event_maps(slices: &[EventSlice<'_>], dims: Dims) -> Vec<Frame> {
    slices.iter().map(|s| accumulate_image(s, dims).data).collect()
}

/// Core solver. `maps` are the accumulated event images `S_{b,b+1}`;
/// `init` overrides the normalized back-projection starting point.
pub fn reconstruct_with_maps(
    snap: &Snapshot,
    masks: &MaskStack,
    maps: Option<&[Frame]>,
    cam: &EventCameraModel,
    cfg: &ReconSettings,
    init: Option<&[Frame]>,
) -> Result<Reconstruction> {
    cfg.validate()?;
    let started = Instant::now();
    let dims = masks.dims();
    let b = masks.len();
    if snap.normalized {
        return Err(Error::InvalidConfig("the solver needs the raw snapshot, not a normalized one".into()));
    }
    if Dims::of(&snap.data) != dims {
        return Err(Error::DimensionMismatch { expected: dims.shape(), found: snap.data.dim() });
    }
    let maps = maps.filter(|_| cfg.event_weight > 0.0);
    if let Some(maps) = maps {
        if maps.len() + 1 != b || maps.iter().any(|m| Dims::of(m) != dims) {
            return Err(Error::ShapeMismatch(format!(
                "expected {} event maps of {:?} for {b} frames",
                b.saturating_sub(1),
                dims.shape()
            )));
        }
        cam.validate()?;
    }

    let y: Vec<f64> = snap.data.iter().copied().collect();
    let weights: Vec<f64> = masks.mask_sum().iter().map(|&s| s as f64).collect();
    let y_norm = norm(&y).max(f64::MIN_POSITIVE);

    let mut v: Vec<f64> = match init {
        Some(frames) => {
            if frames.len() != b || frames.iter().any(|f| Dims::of(f) != dims) {
                return Err(Error::ShapeMismatch("initial frames do not match the masks".into()));
            }
            frames.iter().flat_map(|f| f.iter().copied()).collect()
        }
        None => phi_adjoint(&divide(&y, &weights, 0.0), masks)?,
    };

    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut iterations = 0;
    // ADMM state
    let mut dual = vec![0.0; v.len()];
    // accelerated GAP state
    let mut y_acc = y.clone();

    for iter in 1..=cfg.max_iters {
        iterations = iter;
        let next = match cfg.algorithm {
            Algorithm::GapTv => {
                let phi_v = phi_apply(&v, masks)?;
                let target = if cfg.acceleration {
                    y_acc.iter_mut().zip(&y).zip(&phi_v).for_each(|((a, &yi), &p)| *a += yi - p);
                    &y_acc
                } else {
                    &y
                };
                let r: Vec<f64> = target.iter().zip(&phi_v).map(|(t, p)| t - p).collect();
                let step = phi_adjoint(&divide(&r, &weights, 0.0), masks)?;
                let s: Vec<f64> = v.iter().zip(&step).map(|(a, d)| a + d).collect();
                prior_step(&s, dims, maps, cam, cfg)?
            }
            Algorithm::AdmmTv => {
                let z: Vec<f64> = v.iter().zip(&dual).map(|(a, d)| a + d).collect();
                let phi_z = phi_apply(&z, masks)?;
                let r: Vec<f64> = y.iter().zip(&phi_z).map(|(a, p)| a - p).collect();
                let step = phi_adjoint(&divide(&r, &weights, cfg.admm_rho), masks)?;
                let x: Vec<f64> = z.iter().zip(&step).map(|(a, d)| a + d).collect();
                let shifted: Vec<f64> = x.iter().zip(&dual).map(|(a, d)| a - d).collect();
                let theta = prior_step(&shifted, dims, maps, cam, cfg)?;
                dual.iter_mut().zip(&x).zip(&theta).for_each(|((d, xi), t)| *d -= xi - t);
                theta
            }
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIterate { iteration: iter });
        }
        let residual: Vec<f64> = phi_apply(&next, masks)?.iter().zip(&y).map(|(p, yi)| yi - p).collect();
        trace.push(norm(&residual) / y_norm);
        let change = next.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale = norm(&v);
        v = next;
        let relative = if scale > 0.0 { change / scale } else { change };
        if relative < cfg.tol {
            break;
        }
    }

    let mut frames = frames_from_vector(&v, dims)?;
    frames.iter_mut().for_each(|f| f.mapv_inplace(|x| x.clamp(0.0, 1.0)));
    Ok(Reconstruction {
        frames,
        report: ReconReport {
            iterations_run: iterations,
            final_residual: trace.last().copied().unwrap_or(0.0),
            residual_trace: trace,
            wall_time: started.elapsed().as_secs_f64(),
        },
    })
}

/// TV denoising followed by the optional event step.
fn prior_step(
    signal: &[f64],
    dims: Dims,
    maps: Option<&[Frame]>,
    cam: &EventCameraModel,
    cfg: &ReconSettings,
) -> Result<Vec<f64>> {
    let frames = frames_from_vector(signal, dims)?;
    let mut frames = if cfg.tv_weight > 0.0 { tv_denoise(&frames, cfg.tv_weight, cfg.tv_inner_iters) } else { frames };
    if let Some(maps) = maps {
        let clamped: Vec<Frame> = frames.iter().map(|f| f.mapv(|x| x.clamp(0.0, 1.0))).collect();
        let log_grad = event_consistency_log_grad(&clamped, maps, cam);
        for ((f, c), g) in frames.iter_mut().zip(&clamped).zip(&log_grad) {
            Zip::from(f).and(c).and(g).for_each(|f, &c, &g| {
                *f -= cfg.event_weight * (c + cam.log_eps) * g;
            });
        }
    }
    Ok(frames.iter().flat_map(|f| f.iter().copied()).collect())
}

/// Residuals `D_b = ln(I_{b+1} + eps) - ln(I_b + eps) - T * S_b`.
fn event_residuals(frames: &[Frame], maps: &[Frame], cam: &EventCameraModel) -> Vec<Frame> {
    let logs: Vec<Frame> = frames.iter().map(|f| f.mapv(|v| cam.log_intensity(v))).collect();
    logs.windows(2)
        .zip(maps)
        .map(|(pair, s)| {
            Zip::from(&pair[1]).and(&pair[0]).and(s).map_collect(|&next, &prev, &s| next - prev - cam.threshold * s)
        })
        .collect()
}

/// Gradient of `C_e` with respect to `ln(I_b + eps)`.
fn event_consistency_log_grad(frames: &[Frame], maps: &[Frame], cam: &EventCameraModel) -> Vec<Frame> {
    let residuals = event_residuals(frames, maps, cam);
    let dims = Dims::of(&frames[0]);
    (0..frames.len())
        .map(|k| {
            let mut g = dims.zeros();
            if k > 0 {
                g.zip_mut_with(&residuals[k - 1], |g, d| *g += 2.0 * d);
            }
            if k < residuals.len() {
                g.zip_mut_with(&residuals[k], |g, d| *g -= 2.0 * d);
            }
            g
        })
        .collect()
}

/// Value of the event-consistency penalty `C_e`.
pub fn event_consistency(frames: &[Frame], maps: &[Frame], cam: &EventCameraModel) -> Result<f64> {
    check_event_shapes(frames, maps)?;
    Ok(event_residuals(frames, maps, cam).iter().flat_map(|d| d.iter()).map(|d| d * d).sum())
}

/// Gradient of `C_e` with respect to each frame in linear intensity.
pub fn event_consistency_grad(frames: &[Frame], maps: &[Frame], cam: &EventCameraModel) -> Result<Vec<Frame>> {
    check_event_shapes(frames, maps)?;
    let log_grad = event_consistency_log_grad(frames, maps, cam);
    Ok(log_grad
        .into_iter()
        .zip(frames)
        .map(|(g, f)| Zip::from(&g).and(f).map_collect(|&g, &i| g / (i + cam.log_eps)))
        .collect())
}

/// [`event_consistency_grad`] taking event slices instead of maps.
pub fn event_consistency_grad_slices(
    frames: &[Frame],
    slices: &[EventSlice<'_>],
    cam: &EventCameraModel,
) -> Result<Vec<Frame>> {
    let dims = frames.first().map(Dims::of).ok_or_else(|| Error::ShapeMismatch("no frames".into()))?;
    event_consistency_grad(frames, &event_maps(slices, dims), cam)
}

fn check_event_shapes(frames: &[Frame], maps: &[Frame]) -> Result<()> {
    let Some(first) = frames.first() else {
        return Err(Error::ShapeMismatch("no frames".into()));
    };
    if maps.len() + 1 != frames.len() {
        return Err(Error::ShapeMismatch(format!("{} event maps for {} frames", maps.len(), frames.len())));
    }
    if frames.iter().chain(maps).any(|f| f.dim() != first.dim()) {
        return Err(Error::ShapeMismatch("frames and event maps differ in size".into()));
    }
    Ok(())
}

fn divide(values: &[f64], weights: &[f64], offset: f64) -> Vec<f64> {
    values.iter().zip(weights).map(|(v, &w)| if w == 0.0 { 0.0 } else { v / (w + offset) }).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
