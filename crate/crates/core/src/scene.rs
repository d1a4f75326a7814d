//! Deterministic synthetic scenes and frame-sequence storage.
//!
//! Every scene is a set of binary (or analytic) templates composited over a
//! constant background. Motion is applied by inverse-mapping each output
//! pixel into template coordinates and sampling bilinearly, so integer
//! displacements reproduce exact pixel shifts and fractional ones give
//! sub-pixel edges.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{sample_bilinear, Dims, Frame, FrameSequence};
use crate::rawio;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    TranslatingSquare,
    RotatingBar,
    GaussianBlobOrbit,
    TwoObjectCrossing,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] = [
        SceneKind::TranslatingSquare,
        SceneKind::RotatingBar,
        SceneKind::GaussianBlobOrbit,
        SceneKind::TwoObjectCrossing,
    ];
}

/// Recipe for a synthetic scene. `velocity` is pixels per frame for the
/// translating kinds and radians per frame for the rotating/orbiting ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub height: usize,
    pub width: usize,
    pub count: usize,
    pub velocity: f64,
    pub background: f64,
    pub foreground: f64,
    pub seed: u64,
    /// Seconds between frames.
    pub frame_interval: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            kind: SceneKind::TranslatingSquare,
            height: 64,
            width: 64,
            count: 16,
            velocity: 1.0,
            background: 0.2,
            foreground: 0.8,
            seed: 1,
            frame_interval: 1e-3,
        }
    }
}

impl SceneSpec {
    pub fn dims(&self) -> Dims {
        Dims::new(self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.height < 8 || self.width < 8 {
            return bad(format!("size {}x{} below 8x8", self.height, self.width));
        }
        if self.count == 0 {
            return bad("scene needs at least one frame".into());
        }
        if !self.velocity.is_finite() {
            return bad(format!("velocity {} is not finite", self.velocity));
        }
        for (name, v) in [("background", self.background), ("foreground", self.foreground)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.foreground == self.background {
            return bad("foreground equals background".into());
        }
        if !(self.frame_interval.is_finite() && self.frame_interval > 0.0) {
            return bad(format!("frame interval {} must be positive", self.frame_interval));
        }
        Ok(())
    }
}

/// Renders every frame of `spec`.
pub fn synthesize(spec: &SceneSpec) -> Result<FrameSequence> {
    spec.validate()?;
    let scene = Scene::new(spec);
    let frames = (0..spec.count).map(|k| scene.render(k as f64)).collect();
    FrameSequence::new(frames, spec.frame_interval)
}

/// Renders the scene at a fractional frame position (`0.0` is the first
/// frame, `1.5` lies halfway between the second and third).
pub fn render_at(spec: &SceneSpec, position: f64) -> Result<Frame> {
    spec.validate()?;
    Ok(Scene::new(spec).render(position))
}

struct Scene<'a> {
    spec: &'a SceneSpec,
    /// Time origin, so that motion is centred within the sequence.
    t0: f64,
    phase: f64,
    square: Frame,
}

impl<'a> Scene<'a> {
    fn new(spec: &'a SceneSpec) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
        let phase = rng.random_range(0.0..std::f64::consts::PI);
        let (h, w) = (spec.height, spec.width);
        let side = (h.min(w) / 4).max(4);
        let square = box_template(h, w, (h - side) / 2, (w - side) / 2, side, side);
        Self { spec, t0: ((spec.count - 1) / 2) as f64, phase, square }
    }

    fn render(&self, position: f64) -> Frame {
        let s = self.spec;
        let t = position - self.t0;
        let (h, w) = (s.height, s.width);
        let cr = (h as f64 - 1.0) / 2.0;
        let cc = (w as f64 - 1.0) / 2.0;
        let mut frame = Frame::from_elem((h, w), s.background);
        match s.kind {
            SceneKind::TranslatingSquare => {
                let shift = s.velocity * t;
                composite(&mut frame, s.foreground, |r, c| sample_bilinear(&self.square, r, c - shift, 0.0));
            }
            SceneKind::RotatingBar => {
                let len = (0.7 * h.min(w) as f64).round() as usize;
                let thick = (h.min(w) / 10).max(3);
                let bar = box_template(h, w, (h - thick) / 2, (w - len) / 2, thick, len);
                let angle = self.phase + s.velocity * t;
                let (sin, cos) = angle.sin_cos();
                composite(&mut frame, s.foreground, |r, c| {
                    // rotate the output point back into the template frame
                    let dr = r - cr;
                    let dc = c - cc;
                    let tr = cos * dr - sin * dc + cr;
                    let tc = sin * dr + cos * dc + cc;
                    sample_bilinear(&bar, tr, tc, 0.0)
                });
            }
            SceneKind::GaussianBlobOrbit => {
                let radius = h.min(w) as f64 / 4.0;
                let sigma = h.min(w) as f64 / 12.0;
                let angle = self.phase + s.velocity * t;
                let br = cr + radius * angle.sin();
                let bc = cc + radius * angle.cos();
                composite(&mut frame, s.foreground, |r, c| {
                    let d2 = (r - br).powi(2) + (c - bc).powi(2);
                    (-d2 / (2.0 * sigma * sigma)).exp()
                });
            }
            SceneKind::TwoObjectCrossing => {
                let side = (h.min(w) / 4).max(4);
                let quarter = side / 4;
                let upper = box_template(h, w, (h - side) / 2 - quarter, (w - side) / 2, side, side);
                let lower = box_template(h, w, (h - side) / 2 + quarter, (w - side) / 2, side, side);
                let shift = s.velocity * t;
                let mid = 0.5 * (s.foreground + s.background);
                composite(&mut frame, s.foreground, |r, c| sample_bilinear(&upper, r, c - shift, 0.0));
                composite(&mut frame, mid, |r, c| sample_bilinear(&lower, r, c + shift, 0.0));
            }
        }
        // keep samples representable in f32 so raw_f32 storage is lossless
        frame.mapv_inplace(|v| (v.clamp(0.0, 1.0) as f32) as f64);
        frame
    }
}

fn box_template(h: usize, w: usize, r0: usize, c0: usize, rows: usize, cols: usize) -> Frame {
    Frame::from_shape_fn(
        (h, w),
        |(r, c)| {
            if (r0..r0 + rows).contains(&r) && (c0..c0 + cols).contains(&c) {
                1.0
            } else {
                0.0
            }
        },
    )
}

/// Blends `value` over `frame` with per-pixel coverage in `[0, 1]`.
fn composite(frame: &mut Frame, value: f64, coverage: impl Fn(f64, f64) -> f64) {
    for ((r, c), px) in frame.indexed_iter_mut() {
        let a = coverage(r as f64, c as f64);
        if a != 0.0 {
            *px = (1.0 - a) * *px + a * value;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameFormat {
    PgmDir,
    RawF32,
}

impl std::str::FromStr for FrameFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm_dir" => Ok(FrameFormat::PgmDir),
            "raw_f32" => Ok(FrameFormat::RawF32),
            other => Err(Error::InvalidConfig(format!("unknown frame format {other:?}"))),
        }
    }
}

/// JSON header stored next to frame data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameHeader {
    pub width: usize,
    pub height: usize,
    pub count: usize,
    pub frame_interval: f64,
}

/// Name of the header written inside a PGM directory.
pub const PGM_DIR_HEADER: &str = "frames.json";

/// Frame interval assumed for PGM directories without a header.
pub const DEFAULT_FRAME_INTERVAL: f64 = 1e-3;

pub fn pgm_file_name(index: usize) -> String {
    format!("frame_{:06}.pgm", index + 1)
}

/// Loads a sequence. Returns the sequence and the number of samples that had
/// to be clamped into `[0, 1]` (always 0 for 8-bit input).
pub fn load_frames(path: &Path, format: FrameFormat) -> Result<(FrameSequence, usize)> {
    match format {
        FrameFormat::RawF32 => {
            let header: FrameHeader = rawio::read_json(&rawio::sidecar_path(path))?;
            let dims = Dims::new(header.height, header.width);
            let planes = rawio::read_f32_planes(path, header.count, dims)?;
            let (seq, clamped) = FrameSequence::new_clamped(planes, header.frame_interval)?;
            if clamped > 0 {
                log::warn!("{}: clamped {clamped} samples into [0, 1]", path.display());
            }
            Ok((seq, clamped))
        }
        FrameFormat::PgmDir => {
            let mut files: Vec<(u64, std::path::PathBuf)> = fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter_map(|p| {
                    let stem = p.file_name()?.to_str()?;
                    let n = stem.strip_prefix("frame_")?.strip_suffix(".pgm")?;
                    Some((n.parse().ok()?, p))
                })
                .collect();
            files.sort();
            let header_path = path.join(PGM_DIR_HEADER);
            let frame_interval = if header_path.exists() {
                rawio::read_json::<FrameHeader>(&header_path)?.frame_interval
            } else {
                DEFAULT_FRAME_INTERVAL
            };
            if files.is_empty() {
                return Err(Error::MalformedHeader { path: path.to_path_buf(), reason: "no frame_*.pgm files".into() });
            }
            let frames = files.iter().map(|(_, p)| read_pgm(p)).collect::<Result<Vec<_>>>()?;
            Ok((FrameSequence::new(frames, frame_interval)?, 0))
        }
    }
}

pub fn save_frames(seq: &FrameSequence, path: &Path, format: FrameFormat) -> Result<()> {
    let dims = seq.dims();
    let header = FrameHeader {
        width: dims.width,
        height: dims.height,
        count: seq.count(),
        frame_interval: seq.frame_interval(),
    };
    match format {
        FrameFormat::RawF32 => {
            rawio::write_f32_planes(path, seq.frames())?;
            rawio::write_json(&rawio::sidecar_path(path), &header)
        }
        FrameFormat::PgmDir => {
            fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
            for (k, frame) in seq.frames().iter().enumerate() {
                write_pgm(&path.join(pgm_file_name(k)), frame)?;
            }
            rawio::write_json(&path.join(PGM_DIR_HEADER), &header)
        }
    }
}

/// Files written by [`save_frames`] for `path`.
pub fn saved_files(path: &Path, format: FrameFormat, count: usize) -> Vec<std::path::PathBuf> {
    match format {
        FrameFormat::RawF32 => vec![path.to_path_buf(), rawio::sidecar_path(path)],
        FrameFormat::PgmDir => {
            (0..count).map(|k| path.join(pgm_file_name(k))).chain(std::iter::once(path.join(PGM_DIR_HEADER))).collect()
        }
    }
}

pub fn write_pgm(path: &Path, frame: &Frame) -> Result<()> {
    let (h, w) = frame.dim();
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(frame.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: &str| Error::MalformedHeader { path: path.to_path_buf(), reason: reason.to_string() };
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| malformed("non-ascii header"))?);
    }
    if fields[0] != "P5" {
        return Err(malformed("expected binary P5 magic"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| malformed("bad number in header"));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(malformed("only 8-bit maxval 255 is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes.get(pos..pos + w * h).ok_or_else(|| malformed("truncated raster"))?;
    Ok(Frame::from_shape_vec((h, w), raster.iter().map(|&b| b as f64 / 255.0).collect()).expect("raster size checked"))
}
