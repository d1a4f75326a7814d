//! Frame containers shared by every stage of the pipeline.
//!
//! Frames are `Array2<f64>` indexed `[row, col]`, i.e. shape `(height, width)`.
//! Event coordinates follow the sensor convention: `x` is the column and `y`
//! the row.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One grayscale image in linear intensity.
pub type Frame = Array2<f64>;

/// Image dimensions as `(height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub const fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn of(frame: &Frame) -> Self {
        let (h, w) = frame.dim();
        Self::new(h, w)
    }

    pub const fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub const fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn zeros(&self) -> Frame {
        Frame::zeros(self.shape())
    }
}

/// An ordered stack of equally sized frames sampled at a fixed interval.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    frame_interval: f64,
}

impl FrameSequence {
    /// Builds a sequence, checking shape agreement, sample range and the
    /// frame interval.
    pub fn new(frames: Vec<Frame>, frame_interval: f64) -> Result<Self> {
        let seq = Self::new_unchecked_range(frames, frame_interval)?;
        if let Some(v) = seq.frames.iter().flat_map(|f| f.iter()).find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidSpec(format!("sample {v} outside [0, 1]")));
        }
        Ok(seq)
    }

    /// Like [`FrameSequence::new`] but clamps samples into `[0, 1]`, mapping
    /// NaN to 0. Returns the number of samples that were changed.
    pub fn new_clamped(mut frames: Vec<Frame>, frame_interval: f64) -> Result<(Self, usize)> {
        let mut clamped = 0;
        for v in frames.iter_mut().flat_map(|f| f.iter_mut()) {
            let c = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            if c.to_bits() != v.to_bits() {
                clamped += 1;
                *v = c;
            }
        }
        Ok((Self::new_unchecked_range(frames, frame_interval)?, clamped))
    }

    fn new_unchecked_range(frames: Vec<Frame>, frame_interval: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidSpec("sequence needs at least one frame".into()));
        }
        if !(frame_interval.is_finite() && frame_interval > 0.0) {
            return Err(Error::InvalidSpec(format!("frame interval {frame_interval} must be positive")));
        }
        let dims = Dims::of(&frames[0]);
        if let Some(f) = frames.iter().find(|f| Dims::of(f) != dims) {
            return Err(Error::DimensionMismatch { expected: dims.shape(), found: f.dim() });
        }
        Ok(Self { frames, frame_interval })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn frame(&self, index: usize) -> &Frame {
        &self.frames[index]
    }

    pub fn count(&self) -> usize {
        self.frames.len()
    }

    pub fn dims(&self) -> Dims {
        Dims::of(&self.frames[0])
    }

    /// Seconds between consecutive frames.
    pub fn frame_interval(&self) -> f64 {
        self.frame_interval
    }

    /// Frame interval rounded to whole microseconds.
    pub fn frame_interval_us(&self) -> u64 {
        seconds_to_us(self.frame_interval)
    }

    /// Keeps every `step`-th frame starting at `offset`; the interval grows
    /// accordingly.
    pub fn subsample(&self, offset: usize, step: usize) -> Result<Self> {
        if step == 0 || offset >= self.count() {
            return Err(Error::InvalidCount(format!(
                "cannot take every {step}th frame from offset {offset} of {}",
                self.count()
            )));
        }
        let frames = self.frames.iter().skip(offset).step_by(step).cloned().collect();
        Self::new_unchecked_range(frames, self.frame_interval * step as f64)
    }

    /// Frames concatenated as one signal vector `[vec(I_1), ..., vec(I_B)]`,
    /// each frame vectorized row-major.
    pub fn to_vector(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.iter().copied()).collect()
    }
}

pub(crate) fn seconds_to_us(seconds: f64) -> u64 {
    (seconds * 1e6).round() as u64
}

/// Splits a stacked signal vector back into frames.
pub fn frames_from_vector(signal: &[f64], dims: Dims) -> Result<Vec<Frame>> {
    let n = dims.pixels();
    if n == 0 || !signal.len().is_multiple_of(n) {
        return Err(Error::ShapeMismatch(format!("signal of length {} is not a multiple of {n}", signal.len())));
    }
    Ok(signal
        .chunks_exact(n)
        .map(|c| Frame::from_shape_vec(dims.shape(), c.to_vec()).expect("chunk has frame size"))
        .collect())
}

/// Bilinear sample at fractional `(row, col)`. Neighbours outside the image
/// read as `fill`.
pub fn sample_bilinear(img: &Frame, row: f64, col: f64, fill: f64) -> f64 {
    let (h, w) = img.dim();
    if !(row > -1.0 && col > -1.0 && row < h as f64 && col < w as f64) {
        return fill;
    }
    let r0 = row.floor();
    let c0 = col.floor();
    let fr = row - r0;
    let fc = col - c0;
    let r0 = r0 as isize;
    let c0 = c0 as isize;
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            fill
        } else {
            img[[r as usize, c as usize]]
        }
    };
    let top = if fc == 0.0 { at(r0, c0) } else { (1.0 - fc) * at(r0, c0) + fc * at(r0, c0 + 1) };
    if fr == 0.0 {
        return top;
    }
    let bottom = if fc == 0.0 { at(r0 + 1, c0) } else { (1.0 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1) };
    (1.0 - fr) * top + fr * bottom
}

/// Bilinear resize that maps pixel centres onto pixel centres.
pub fn resize_bilinear(img: &Frame, dims: Dims) -> Frame {
    let (h, w) = img.dim();
    if Dims::new(h, w) == dims {
        return img.clone();
    }
    let sy = h as f64 / dims.height as f64;
    let sx = w as f64 / dims.width as f64;
    Frame::from_shape_fn(dims.shape(), |(r, c)| {
        let row = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let col = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        sample_bilinear(img, row, col, 0.0)
    })
}
