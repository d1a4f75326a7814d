//! Frames at arbitrary timestamps from decoded frames plus events.
//!
//! For a position `b + f` between decoded frames `b` and `b + 1`, the forward
//! estimate integrates the events of `[t_b, t_{b+f})` onto frame `b`; the
//! backward estimate integrates the events of `[t_{b+f}, t_{b+1})` with
//! flipped polarity onto frame `b + 1`. The two are blended linearly in `f`.
//! Past the last decoded frame only the forward estimate exists and is used
//! regardless of the blend.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{integrate_polarity_sum, EventCameraModel, EventStream};
use crate::frame::{Frame, FrameSequence};
use crate::repr::{accumulate_image, fractional_split_point, EventSlice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blend {
    #[default]
    LinearTime,
    ForwardOnly,
    BackwardOnly,
}

impl std::str::FromStr for Blend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_time" => Ok(Blend::LinearTime),
            "forward_only" => Ok(Blend::ForwardOnly),
            "backward_only" => Ok(Blend::BackwardOnly),
            other => Err(Error::InvalidConfig(format!("unknown blend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimePoint {
    /// Microseconds on the event clock.
    Absolute(u64),
    /// Fraction `f` of the way from decoded frame `b` (0-based) to `b + 1`.
    Fractional { b: usize, f: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolationRequest {
    pub at: TimePoint,
    pub blend: Blend,
}

enum Resolved {
    Exact(usize),
    Between { b: usize, f: f64, split: u64 },
}

struct Timeline {
    sync: u64,
    interval: u64,
    count: usize,
    end: u64,
}

impl Timeline {
    fn new(frames: &FrameSequence, stream: &EventStream) -> Result<Self> {
        let interval = frames.frame_interval_us();
        if interval == 0 {
            return Err(Error::InvalidConfig("frame interval rounds to 0 us".into()));
        }
        Ok(Self { sync: stream.sync_t(), interval, count: frames.count(), end: stream.span().1 })
    }

    fn time_of(&self, b: usize) -> u64 {
        self.sync + b as u64 * self.interval
    }

    fn out_of_span(&self, t: f64) -> Error {
        Error::OutOfSpan { t_us: t, start_us: self.sync, end_us: self.end }
    }

    fn resolve(&self, at: TimePoint) -> Result<Resolved> {
        let resolved = match at {
            TimePoint::Absolute(t) => {
                if t < self.sync {
                    return Err(self.out_of_span(t as f64));
                }
                let offset = t - self.sync;
                let b = (offset / self.interval) as usize;
                let rem = offset % self.interval;
                if rem == 0 && b < self.count {
                    return Ok(Resolved::Exact(b));
                }
                Resolved::Between { b, f: rem as f64 / self.interval as f64, split: t }
            }
            TimePoint::Fractional { b, f } => {
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::InvalidFraction(f));
                }
                let t_b = self.time_of(b);
                Resolved::Between { b, f, split: fractional_split_point(t_b, t_b + self.interval, f) }
            }
        };
        if let Resolved::Between { b, split, .. } = resolved {
            if b >= self.count || split > self.end {
                return Err(self.out_of_span(split as f64));
            }
        }
        Ok(resolved)
    }
}

/// Interpolates one frame. `frames` are the decoded frames (frame 0 at the
/// stream's sync marker) and `stream` is in the same geometry.
pub fn interpolate(
    frames: &FrameSequence,
    stream: &EventStream,
    req: &InterpolationRequest,
    cam: &EventCameraModel,
) -> Result<Frame> {
    cam.validate()?;
    let dims = frames.dims();
    if cam.dims() != dims {
        return Err(Error::ResolutionMismatch { camera: cam.dims().shape(), frames: dims.shape() });
    }
    let timeline = Timeline::new(frames, stream)?;
    match timeline.resolve(req.at)? {
        Resolved::Exact(b) => Ok(frames.frame(b).clone()),
        Resolved::Between { b, f, split } => {
            let t_b = timeline.time_of(b);
            let forward = || {
                let sums = accumulate_image(&EventSlice::of(stream, t_b, split), dims).data;
                integrate_frame(frames.frame(b), &sums, 1.0, cam)
            };
            if b + 1 >= frames.count() {
                return Ok(forward());
            }
            let backward = || {
                let t_next = timeline.time_of(b + 1);
                let sums = accumulate_image(&EventSlice::of(stream, split, t_next), dims).data;
                integrate_frame(frames.frame(b + 1), &sums, -1.0, cam)
            };
            Ok(match req.blend {
                Blend::ForwardOnly => forward(),
                Blend::BackwardOnly => backward(),
                Blend::LinearTime => {
                    let (fw, bw) = (forward(), backward());
                    let mut out = fw * (1.0 - f);
                    out.scaled_add(f, &bw);
                    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
                    out
                }
            })
        }
    }
}

fn integrate_frame(start: &Frame, sums: &Frame, sign: f64, cam: &EventCameraModel) -> Frame {
    let mut out = start.clone();
    out.zip_mut_with(sums, |v, &s| *v = integrate_polarity_sum(*v, sign * s, cam));
    out
}

/// Output of [`densify`]: frames with their timestamps in microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVideo {
    pub frames: FrameSequence,
    pub timestamps_us: Vec<u64>,
}

/// `n_out` frames uniformly spaced over the `B` frame slots of the exposure,
/// i.e. at positions `k * B / n_out` for `k = 0..n_out`. Positions that land on
/// decoded frames return them untouched.
pub fn densify(
    frames: &FrameSequence,
    stream: &EventStream,
    n_out: usize,
    cam: &EventCameraModel,
    blend: Blend,
) -> Result<DenseVideo> {
    let b = frames.count();
    if n_out < b {
        return Err(Error::InvalidCount(format!("{n_out} output frames is fewer than the {b} decoded ones")));
    }
    let timeline = Timeline::new(frames, stream)?;
    let points: Vec<(TimePoint, u64)> = (0..n_out)
        .map(|k| {
            let num = k * b;
            let (slot, rem) = (num / n_out, num % n_out);
            let t_slot = timeline.time_of(slot);
            if rem == 0 {
                (TimePoint::Absolute(t_slot), t_slot)
            } else {
                let f = rem as f64 / n_out as f64;
                let split = fractional_split_point(t_slot, t_slot + timeline.interval, f);
                (TimePoint::Fractional { b: slot, f }, split)
            }
        })
        .collect();
    let out = points
        .par_iter()
        .map(|&(at, _)| interpolate(frames, stream, &InterpolationRequest { at, blend }, cam))
        .collect::<Result<Vec<_>>>()?;
    let interval = frames.frame_interval() * b as f64 / n_out as f64;
    Ok(DenseVideo {
        frames: FrameSequence::new(out, interval)?,
        timestamps_us: points.iter().map(|&(_, t)| t).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;
    use crate::frame::Dims;

    fn cam(dims: Dims, threshold: f64) -> EventCameraModel {
        EventCameraModel { threshold, ..EventCameraModel::for_dims(dims) }
    }

    fn seq(frames: Vec<Frame>) -> FrameSequence {
        FrameSequence::new(frames, 1e-3).unwrap()
    }

    fn at(b: usize, f: f64) -> InterpolationRequest {
        InterpolationRequest { at: TimePoint::Fractional { b, f }, blend: Blend::LinearTime }
    }

    #[test]
    fn static_scene_stays_put() {
        let d = Dims::new(5, 6);
        let c = cam(d, 0.15);
        let img = Frame::from_shape_fn(d.shape(), |(r, k)| 0.1 * r as f64 + 0.05 * k as f64);
        let frames = seq(vec![img.clone(); 3]);
        let stream = EventStream::new(vec![], c.clone(), 0, (0, 3000)).unwrap();
        for f in [0.01, 0.3, 0.5, 0.99] {
            let out = interpolate(&frames, &stream, &at(1, f), &c).unwrap();
            assert!(out.iter().zip(img.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        let dense = densify(&frames, &stream, 7, &c, Blend::LinearTime).unwrap();
        assert!(dense.frames.frames().iter().all(|fr| fr.iter().zip(img.iter()).all(|(a, b)| (a - b).abs() < 1e-12)));
    }

    #[test]
    fn consistent_estimates_agree_in_closed_form() {
        let d = Dims::new(1, 1);
        let c = cam(d, 0.2);
        let eps = c.log_eps;
        let i0 = 0.4 - eps;
        let i1 = 0.4 * 0.2f64.exp() - eps;
        let frames = seq(vec![Frame::from_elem((1, 1), i0), Frame::from_elem((1, 1), i1)]);
        let stream = EventStream::new(vec![Event::new(200, 0, 0, 1)], c.clone(), 0, (0, 1000)).unwrap();
        for blend in [Blend::ForwardOnly, Blend::BackwardOnly, Blend::LinearTime] {
            let req = InterpolationRequest { at: TimePoint::Fractional { b: 0, f: 0.5 }, blend };
            let out = interpolate(&frames, &stream, &req, &c).unwrap();
            assert!((out[[0, 0]] - i1).abs() < 1e-12, "{blend:?}: {}", out[[0, 0]]);
        }
    }

    #[test]
    fn boundaries_are_consistent() {
        let d = Dims::new(2, 2);
        let c = cam(d, 0.1);
        let a = Frame::from_elem((2, 2), 0.3);
        let b = Frame::from_elem((2, 2), 0.6);
        let frames = seq(vec![a.clone(), b.clone()]);
        // Events only mid-interval so neither end of the interval sees any.
        let events = (0..7).map(|k| Event::new(400 + k, 0, 0, 1)).collect();
        let stream = EventStream::new(events, c.clone(), 0, (0, 1000)).unwrap();
        let lo = interpolate(&frames, &stream, &at(0, 1e-9), &c).unwrap();
        let hi = interpolate(&frames, &stream, &at(0, 1.0 - 1e-9), &c).unwrap();
        assert!(lo.iter().zip(a.iter()).all(|(x, y)| (x - y).abs() < 1e-8));
        assert!(hi.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-8));
        let exact = InterpolationRequest { at: TimePoint::Absolute(1000), blend: Blend::LinearTime };
        assert_eq!(interpolate(&frames, &stream, &exact, &c).unwrap(), b);
    }

    #[test]
    fn blend_is_convex() {
        let d = Dims::new(3, 3);
        let c = cam(d, 0.1);
        let a = Frame::from_shape_fn((3, 3), |(r, k)| 0.1 + 0.1 * (r + k) as f64);
        let b = Frame::from_shape_fn((3, 3), |(r, k)| 0.7 - 0.05 * (r * k) as f64);
        let frames = seq(vec![a, b]);
        let events = vec![
            Event::new(100, 0, 0, 1),
            Event::new(300, 2, 1, -1),
            Event::new(650, 1, 1, 1),
            Event::new(800, 0, 2, -1),
        ];
        let stream = EventStream::new(events, c.clone(), 0, (0, 1000)).unwrap();
        for f in [0.2, 0.5, 0.7] {
            let get = |blend| {
                let req = InterpolationRequest { at: TimePoint::Fractional { b: 0, f }, blend };
                interpolate(&frames, &stream, &req, &c).unwrap()
            };
            let (fw, bw, out) = (get(Blend::ForwardOnly), get(Blend::BackwardOnly), get(Blend::LinearTime));
            for ((o, x), y) in out.iter().zip(fw.iter()).zip(bw.iter()) {
                assert!(*o >= x.min(*y) - 1e-12 && *o <= x.max(*y) + 1e-12);
                assert!((0.0..=1.0).contains(o));
            }
        }
    }

    #[test]
    fn trailing_slot_extrapolates_forward() {
        let d = Dims::new(1, 1);
        let c = cam(d, 0.2);
        let frames = seq(vec![Frame::from_elem((1, 1), 0.3), Frame::from_elem((1, 1), 0.4)]);
        let stream = EventStream::new(vec![Event::new(1200, 0, 0, 1)], c.clone(), 0, (0, 2000)).unwrap();
        let out = interpolate(&frames, &stream, &at(1, 0.5), &c).unwrap();
        let want = (0.4 + c.log_eps) * 0.2f64.exp() - c.log_eps;
        assert!((out[[0, 0]] - want).abs() < 1e-12);
        let beyond = InterpolationRequest { at: TimePoint::Absolute(2001), blend: Blend::LinearTime };
        assert!(matches!(interpolate(&frames, &stream, &beyond, &c), Err(Error::OutOfSpan { .. })));
        assert!(matches!(interpolate(&frames, &stream, &at(2, 0.5), &c), Err(Error::OutOfSpan { .. })));
        assert!(matches!(interpolate(&frames, &stream, &at(0, 1.0), &c), Err(Error::InvalidFraction(_))));
    }

    #[test]
    fn densify_counts_and_timestamps() {
        let d = Dims::new(2, 2);
        let c = cam(d, 0.1);
        let frames = seq((0..4).map(|k| Frame::from_elem((2, 2), 0.2 + 0.1 * k as f64)).collect());
        let stream = EventStream::new(vec![], c.clone(), 0, (0, 4000)).unwrap();
        let same = densify(&frames, &stream, 4, &c, Blend::LinearTime).unwrap();
        assert_eq!(same.frames.frames(), frames.frames());
        assert_eq!(same.timestamps_us, vec![0, 1000, 2000, 3000]);
        let dense = densify(&frames, &stream, 8, &c, Blend::LinearTime).unwrap();
        assert_eq!(dense.timestamps_us, vec![0, 500, 1000, 1500, 2000, 2500, 3000, 3500]);
        for k in 0..4 {
            assert_eq!(dense.frames.frame(2 * k), frames.frame(k));
        }
        assert_eq!(dense.frames.frame_interval_us(), 500);
        assert!(matches!(densify(&frames, &stream, 3, &c, Blend::LinearTime), Err(Error::InvalidCount(_))));
    }
}
