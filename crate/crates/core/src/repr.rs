//! Event slicing and dense event representations.
//!
//! All intervals are half-open, `[t_a, t_b)`. Slices borrow contiguous runs
//! of the time-sorted stream.

use std::path::Path;

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Event, EventStream};
use crate::frame::{seconds_to_us, Dims, Frame};
use crate::rawio;

/// Temporal bins per slice when none is configured.
pub const DEFAULT_BINS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventSlice<'a> {
    pub events: &'a [Event],
    pub t_a: u64,
    pub t_b: u64,
}

impl<'a> EventSlice<'a> {
    pub fn of(stream: &'a EventStream, t_a: u64, t_b: u64) -> Self {
        Self { events: stream.between(t_a, t_b), t_a, t_b }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn polarity_sum(&self) -> i64 {
        self.events.iter().map(|e| e.p as i64).sum()
    }
}

/// Boundaries `sync_t + k * interval` for `k = 0..=b`, checking the stream
/// covers them.
fn frame_times(stream: &EventStream, b: usize, frame_interval: f64) -> Result<Vec<u64>> {
    if b < 2 {
        return Err(Error::InvalidCount(format!("need at least 2 frames, got {b}")));
    }
    let interval = seconds_to_us(frame_interval);
    if interval == 0 {
        return Err(Error::InvalidConfig(format!("frame interval {frame_interval} s rounds to 0 us")));
    }
    let required = (b as u64 - 1) * interval;
    let available = stream.span().1.saturating_sub(stream.sync_t());
    if available < required {
        return Err(Error::SpanTooShort { required_us: required, available_us: available });
    }
    Ok((0..b as u64).map(|k| stream.sync_t() + k * interval).collect())
}

/// `{E_{1,2}, ..., E_{B-1,B}}` anchored at the sync marker.
pub fn split_by_frames(stream: &EventStream, b: usize, frame_interval: f64) -> Result<Vec<EventSlice<'_>>> {
    let times = frame_times(stream, b, frame_interval)?;
    Ok(times.windows(2).map(|w| EventSlice::of(stream, w[0], w[1])).collect())
}

/// Forward slices `E_{b, b+f}` and backward slices `E_{b+f, b+1}` for every
/// inter-frame gap. Each pair partitions the matching whole-frame slice.
#[allow(clippy::type_complexity)]
pub fn split_fractional(
    stream: &EventStream,
    b: usize,
    f: f64,
    frame_interval: f64,
) -> Result<(Vec<EventSlice<'_>>, Vec<EventSlice<'_>>)> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::InvalidFraction(f));
    }
    let times = frame_times(stream, b, frame_interval)?;
    let (forward, backward) = times
        .windows(2)
        .map(|w| {
            let split = fractional_split_point(w[0], w[1], f);
            (EventSlice::of(stream, w[0], split), EventSlice::of(stream, split, w[1]))
        })
        .unzip();
    Ok((forward, backward))
}

/// `t_a + round(f * (t_b - t_a))`.
pub fn fractional_split_point(t_a: u64, t_b: u64, f: f64) -> u64 {
    t_a + (f * (t_b - t_a) as f64).round() as u64
}

/// Events binned into `n_bins` temporal planes with linear time weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EventVoxelGrid {
    /// Shape `(n_bins, height, width)`.
    pub bins: Array3<f64>,
    pub t_a: u64,
    pub t_b: u64,
}

impl EventVoxelGrid {
    pub fn n_bins(&self) -> usize {
        self.bins.len_of(Axis(0))
    }

    pub fn dims(&self) -> Dims {
        let (_, h, w) = self.bins.dim();
        Dims::new(h, w)
    }

    pub fn bin(&self, i: usize) -> Frame {
        self.bins.index_axis(Axis(0), i).to_owned()
    }

    pub fn total_mass(&self) -> f64 {
        self.bins.sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelOptions {
    pub n_bins: usize,
    /// Divide the grid by the number of contributing events.
    pub normalize: bool,
}

impl Default for VoxelOptions {
    fn default() -> Self {
        Self { n_bins: DEFAULT_BINS, normalize: false }
    }
}

/// Builds a voxel grid: an event at normalized time
/// `t* = (t - t_a) / (t_b - t_a) * (n_bins - 1)` adds `p * (1 - |t* - i|)` to
/// each bin `i` with `|t* - i| < 1`. Events outside the frame are skipped.
pub fn voxelize(slice: &EventSlice<'_>, n_bins: usize, dims: Dims) -> Result<EventVoxelGrid> {
    voxelize_with(slice, VoxelOptions { n_bins, normalize: false }, dims)
}

pub fn voxelize_with(slice: &EventSlice<'_>, opts: VoxelOptions, dims: Dims) -> Result<EventVoxelGrid> {
    if opts.n_bins == 0 {
        return Err(Error::InvalidCount("voxel grid needs at least one bin".into()));
    }
    if slice.t_b <= slice.t_a {
        return Err(Error::DegenerateInterval(slice.t_a, slice.t_b));
    }
    let mut bins = Array3::zeros((opts.n_bins, dims.height, dims.width));
    let span = (slice.t_b - slice.t_a) as f64;
    let scale = (opts.n_bins - 1) as f64;
    let mut used = 0usize;
    for e in slice.events {
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= dims.width || y >= dims.height {
            continue;
        }
        used += 1;
        let ts = (e.t.saturating_sub(slice.t_a)) as f64 / span * scale;
        let lo = ts.floor();
        let frac = ts - lo;
        let lo = lo as usize;
        let p = e.p as f64;
        bins[[lo.min(opts.n_bins - 1), y, x]] += p * (1.0 - frac);
        if frac > 0.0 && lo + 1 < opts.n_bins {
            bins[[lo + 1, y, x]] += p * frac;
        }
    }
    if opts.normalize && used > 0 {
        bins /= used as f64;
    }
    Ok(EventVoxelGrid { bins, t_a: slice.t_a, t_b: slice.t_b })
}

/// Signed polarity sum per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct EventImage {
    pub data: Frame,
}

pub fn accumulate_image(slice: &EventSlice<'_>, dims: Dims) -> EventImage {
    let mut data = dims.zeros();
    for e in slice.events {
        if let Some(v) = data.get_mut([e.y as usize, e.x as usize]) {
            *v += e.p as f64;
        }
    }
    EventImage { data }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelHeader {
    pub n_bins: usize,
    pub t_a_us: u64,
    pub t_b_us: u64,
    pub width: usize,
    pub height: usize,
}

pub fn write_voxels(grid: &EventVoxelGrid, path: &Path) -> Result<()> {
    let planes: Vec<Frame> = (0..grid.n_bins()).map(|i| grid.bin(i)).collect();
    rawio::write_f32_planes(path, &planes)?;
    let dims = grid.dims();
    rawio::write_json(
        &rawio::sidecar_path(path),
        &VoxelHeader {
            n_bins: grid.n_bins(),
            t_a_us: grid.t_a,
            t_b_us: grid.t_b,
            width: dims.width,
            height: dims.height,
        },
    )
}

pub fn read_voxels(path: &Path) -> Result<EventVoxelGrid> {
    let header: VoxelHeader = rawio::read_json(&rawio::sidecar_path(path))?;
    let dims = Dims::new(header.height, header.width);
    let planes = rawio::read_f32_planes(path, header.n_bins, dims)?;
    let mut bins = Array3::zeros((header.n_bins, dims.height, dims.width));
    for (i, p) in planes.iter().enumerate() {
        bins.index_axis_mut(Axis(0), i).assign(p);
    }
    Ok(EventVoxelGrid { bins, t_a: header.t_a_us, t_b: header.t_b_us })
}
