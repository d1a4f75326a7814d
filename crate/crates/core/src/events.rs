//! Event camera simulation under the ideal log-intensity threshold model.
//!
//! Each pixel tracks a reference level `L_ref` in `L = ln(I + log_eps)`.
//! Whenever `|L(t) - L_ref| >= T` an event of the matching polarity fires and
//! the reference moves by exactly `T` towards `L(t)`. Between frames `L(t)` is
//! linear in time, so every crossing time is closed-form.
//!
//! Timestamps are integer microseconds. A crossing at exact time `t` is
//! stamped at the last tick strictly before `t`, except that it never
//! precedes the segment start. This keeps every event produced between frames
//! `k` and `k + 1` inside the half-open interval `[t_k, t_{k+1})`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Dims, FrameSequence};
use crate::rawio;

/// Slack on the threshold comparison so crossings that land exactly on a
/// frame sample are not lost to rounding.
const CROSSING_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Event {
    /// Microseconds.
    pub t: u64,
    /// Column.
    pub x: u16,
    /// Row.
    pub y: u16,
    /// +1 or -1.
    pub p: i8,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: i8) -> Self {
        Self { t, x, y, p }
    }

    fn sort_key(&self) -> (u64, u16, u16, i8) {
        (self.t, self.y, self.x, self.p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventCameraModel {
    /// Contrast threshold in log-intensity units.
    pub threshold: f64,
    /// Offset added before the logarithm.
    pub log_eps: f64,
    pub height: usize,
    pub width: usize,
    pub timestamp_resolution_us: u64,
    /// Reserved for per-polarity thresholds `[positive, negative]`; must be
    /// unset.
    pub asymmetric_thresholds: Option<[f64; 2]>,
}

impl Default for EventCameraModel {
    fn default() -> Self {
        Self {
            threshold: 0.15,
            log_eps: 1e-3,
            height: 480,
            width: 640,
            timestamp_resolution_us: 1,
            asymmetric_thresholds: None,
        }
    }
}

impl EventCameraModel {
    /// Default model with the given resolution.
    pub fn for_dims(dims: Dims) -> Self {
        Self { height: dims.height, width: dims.width, ..Self::default() }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return bad(format!("threshold {} must be > 0", self.threshold));
        }
        if !(self.log_eps > 0.0 && self.log_eps.is_finite()) {
            return bad(format!("log_eps {} must be > 0", self.log_eps));
        }
        if self.timestamp_resolution_us == 0 {
            return bad("timestamp resolution must be at least 1 us".into());
        }
        if self.height == 0 || self.width == 0 || self.height > 1 << 16 || self.width > 1 << 16 {
            return bad(format!("resolution {}x{} unsupported", self.height, self.width));
        }
        if self.asymmetric_thresholds.is_some() {
            return bad("asymmetric thresholds are reserved and not supported".into());
        }
        Ok(())
    }

    pub fn log_intensity(&self, intensity: f64) -> f64 {
        (intensity + self.log_eps).ln()
    }
}

/// Time-sorted events with the camera that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    camera: EventCameraModel,
    sync_t: u64,
    t_start: u64,
    t_end: u64,
}

impl EventStream {
    /// Checks ordering, span membership, coordinates and polarities.
    pub fn new(events: Vec<Event>, camera: EventCameraModel, sync_t: u64, span: (u64, u64)) -> Result<Self> {
        let (t_start, t_end) = span;
        if t_start > t_end || sync_t < t_start || sync_t > t_end {
            return Err(Error::InvalidConfig(format!("sync {sync_t} and span [{t_start}, {t_end}) are inconsistent")));
        }
        if let Some(w) = events.windows(2).find(|w| w[1].t < w[0].t) {
            return Err(Error::InvalidConfig(format!("timestamps decrease from {} to {}", w[0].t, w[1].t)));
        }
        if let Some(e) = events.iter().find(|e| {
            e.t < t_start
                || e.t >= t_end
                || e.x as usize >= camera.width
                || e.y as usize >= camera.height
                || (e.p != 1 && e.p != -1)
        }) {
            return Err(Error::InvalidConfig(format!("event {e:?} is out of range")));
        }
        Ok(Self { events, camera, sync_t, t_start, t_end })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn camera(&self) -> &EventCameraModel {
        &self.camera
    }

    /// Exposure-start marker.
    pub fn sync_t(&self) -> u64 {
        self.sync_t
    }

    /// `[t_start, t_end)` in microseconds.
    pub fn span(&self) -> (u64, u64) {
        (self.t_start, self.t_end)
    }

    /// Events with `t_a <= t < t_b`.
    pub fn between(&self, t_a: u64, t_b: u64) -> &[Event] {
        let lo = self.events.partition_point(|e| e.t < t_a);
        let hi = self.events.partition_point(|e| e.t < t_b).max(lo);
        &self.events[lo..hi]
    }
}

/// Simulates the event camera watching `seq`. Frame `k` is observed at
/// `k * frame_interval` microseconds; the sync marker sits at frame 0.
pub fn simulate_events(seq: &FrameSequence, cam: &EventCameraModel) -> Result<EventStream> {
    cam.validate()?;
    let dims = seq.dims();
    if cam.dims() != dims {
        return Err(Error::ResolutionMismatch { camera: cam.dims().shape(), frames: dims.shape() });
    }
    if seq.count() < 2 {
        return Err(Error::InvalidCount("event simulation needs at least two frames".into()));
    }
    let interval = seq.frame_interval_us();
    let res = cam.timestamp_resolution_us;
    if interval < res {
        return Err(Error::InvalidConfig(format!("frame interval {interval} us is shorter than one {res} us tick")));
    }
    let ticks_per_frame = interval.div_ceil(res);
    let logs: Vec<Vec<f64>> = seq.frames().iter().map(|f| f.iter().map(|&v| cam.log_intensity(v)).collect()).collect();
    let threshold = cam.threshold;

    let mut events: Vec<Event> = (0..dims.height)
        .into_par_iter()
        .flat_map_iter(|row| {
            let logs = &logs;
            (0..dims.width).flat_map(move |col| {
                let idx = row * dims.width + col;
                let mut out = Vec::new();
                let mut reference = logs[0][idx];
                for k in 0..logs.len() - 1 {
                    let (l0, l1) = (logs[k][idx], logs[k + 1][idx]);
                    let t_k = k as u64 * interval;
                    let mut emit = |level: f64, p: i8| {
                        let frac = ((level - l0) / (l1 - l0)).clamp(0.0, 1.0);
                        let exact = frac * ticks_per_frame as f64;
                        let tick = (exact.ceil() as u64).saturating_sub(1).min(ticks_per_frame - 1);
                        let t = (t_k + tick * res).min(t_k + interval - 1);
                        out.push(Event::new(t, col as u16, row as u16, p));
                    };
                    while l1 - reference >= threshold - CROSSING_SLACK {
                        reference += threshold;
                        emit(reference, 1);
                    }
                    while reference - l1 >= threshold - CROSSING_SLACK {
                        reference -= threshold;
                        emit(reference, -1);
                    }
                }
                out
            })
        })
        .collect();
    events.par_sort_unstable_by_key(Event::sort_key);
    let t_end = (seq.count() as u64 - 1) * interval;
    EventStream::new(events, cam.clone(), 0, (0, t_end))
}

/// Applies the polarity sum of a run of events to a starting intensity:
/// `exp(ln(i0 + eps) + T * sum p) - eps`, clamped to `[0, 1]`.
pub fn integrate_polarity_sum(i0: f64, polarity_sum: f64, cam: &EventCameraModel) -> f64 {
    if polarity_sum == 0.0 {
        return i0.clamp(0.0, 1.0);
    }
    ((cam.log_intensity(i0) + cam.threshold * polarity_sum).exp() - cam.log_eps).clamp(0.0, 1.0)
}

pub fn integrate_events(i0: f64, polarities: impl IntoIterator<Item = i8>, cam: &EventCameraModel) -> f64 {
    let sum: i64 = polarities.into_iter().map(i64::from).sum();
    integrate_polarity_sum(i0, sum as f64, cam)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventFormat {
    Bin16,
    Csv,
}

impl EventFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            EventFormat::Bin16 => "bin16",
            EventFormat::Csv => "csv",
        }
    }

    /// `.csv` files are CSV, anything else is bin16.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => EventFormat::Csv,
            _ => EventFormat::Bin16,
        }
    }
}

impl std::str::FromStr for EventFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bin16" => Ok(EventFormat::Bin16),
            "csv" => Ok(EventFormat::Csv),
            other => Err(Error::InvalidConfig(format!("unknown event format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventHeader {
    #[serde(rename = "T")]
    pub threshold: f64,
    pub log_eps: f64,
    pub width: usize,
    pub height: usize,
    pub timestamp_resolution_us: u64,
    pub sync_t_us: u64,
    pub t_start_us: u64,
    pub t_end_us: u64,
}

pub const BIN16_RECORD_LEN: usize = 16;

/// Writes the records plus a `.json` sidecar with the camera and span.
pub fn write_events(stream: &EventStream, path: &Path, format: EventFormat) -> Result<()> {
    match format {
        EventFormat::Bin16 => {
            let mut bytes = Vec::with_capacity(stream.len() * BIN16_RECORD_LEN);
            for e in stream.events() {
                bytes.extend_from_slice(&e.t.to_le_bytes());
                bytes.extend_from_slice(&e.x.to_le_bytes());
                bytes.extend_from_slice(&e.y.to_le_bytes());
                bytes.push(e.p as u8);
                bytes.extend_from_slice(&[0; 3]);
            }
            fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        }
        EventFormat::Csv => {
            let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut writer = csv::Writer::from_writer(std::io::BufWriter::new(file));
            // the header row must exist even for an empty stream
            writer.write_record(["t", "x", "y", "p"]).map_err(|e| Error::io(path, e.into()))?;
            for e in stream.events() {
                writer
                    .write_record(&[e.t.to_string(), e.x.to_string(), e.y.to_string(), e.p.to_string()])
                    .map_err(|e| Error::io(path, e.into()))?;
            }
            let mut inner = writer.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
            inner.flush().map_err(|e| Error::io(path, e))?;
        }
    }
    let cam = stream.camera();
    let (t_start, t_end) = stream.span();
    rawio::write_json(
        &rawio::sidecar_path(path),
        &EventHeader {
            threshold: cam.threshold,
            log_eps: cam.log_eps,
            width: cam.width,
            height: cam.height,
            timestamp_resolution_us: cam.timestamp_resolution_us,
            sync_t_us: stream.sync_t(),
            t_start_us: t_start,
            t_end_us: t_end,
        },
    )
}

/// Reads a stream written by [`write_events`]; the format follows the file
/// extension.
pub fn read_events(path: &Path) -> Result<EventStream> {
    let header: EventHeader = rawio::read_json(&rawio::sidecar_path(path))?;
    let malformed = |reason: String| Error::MalformedRecord { path: path.to_path_buf(), reason };
    let events = match EventFormat::from_path(path) {
        EventFormat::Bin16 => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            if bytes.len() % BIN16_RECORD_LEN != 0 {
                return Err(malformed(format!(
                    "{} bytes is not a whole number of {BIN16_RECORD_LEN}-byte records",
                    bytes.len()
                )));
            }
            bytes
                .chunks_exact(BIN16_RECORD_LEN)
                .map(|r| {
                    Event::new(
                        u64::from_le_bytes(r[0..8].try_into().expect("8 bytes")),
                        u16::from_le_bytes([r[8], r[9]]),
                        u16::from_le_bytes([r[10], r[11]]),
                        r[12] as i8,
                    )
                })
                .collect::<Vec<_>>()
        }
        EventFormat::Csv => {
            let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                other => malformed(format!("{other:?}")),
            })?;
            reader
                .deserialize::<Event>()
                .map(|r| r.map_err(|e| malformed(e.to_string())))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let camera = EventCameraModel {
        threshold: header.threshold,
        log_eps: header.log_eps,
        height: header.height,
        width: header.width,
        timestamp_resolution_us: header.timestamp_resolution_us,
        asymmetric_thresholds: None,
    };
    EventStream::new(events, camera, header.sync_t_us, (header.t_start_us, header.t_end_us))
        .map_err(|e| malformed(e.to_string()))
}
