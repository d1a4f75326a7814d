//! Subcommands chaining the core modules. Every command writes its files
//! under the output directory and lists them, with paths relative to that
//! directory, in its own `manifest_<command>.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use evsci_core::events::{read_events, simulate_events, write_events};
use evsci_core::interp::densify;
use evsci_core::metrics::{evaluate_sequence, frame_metric, FrameMetric, MetricReport};
use evsci_core::rawio::{read_json, sidecar_path, write_json};
use evsci_core::recon::{event_maps, reconstruct_with_maps, ReconReport, ReconSettings};
use evsci_core::registration::{apply_patch_transforms, register_patches, write_registration, RegistrationResult};
use evsci_core::repr::{accumulate_image, split_by_frames, EventSlice};
use evsci_core::scene::{load_frames, save_frames, saved_files, synthesize};
use evsci_core::sci::{
    encode, generate_masks, normalize_measurement, read_masks, read_snapshot, write_masks, write_snapshot,
};
use evsci_core::{EventFormat, EventStream, FrameFormat, FrameSequence, MaskStack, Snapshot};
use serde::{Deserialize, Serialize};

use crate::config::{sub_seed, PipelineConfig};
use crate::error::{artifact, CliError, Result};

pub const LABEL_FUSED: &str = "event-fused";
pub const LABEL_INTENSITY_ONLY: &str = "intensity-only";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest<D> {
    pub command: String,
    /// Named artifacts, relative to the output directory.
    pub artifacts: BTreeMap<String, PathBuf>,
    /// Every file this command wrote, including the manifest itself.
    pub files: Vec<PathBuf>,
    pub details: D,
    pub config: PipelineConfig,
}

pub fn manifest_name(command: &str) -> String {
    format!("manifest_{command}.json")
}

/// What `simulate` records about timing and seeding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateDetails {
    pub gt_frame_count: usize,
    pub gt_frame_interval_us: u64,
    /// Ground-truth indices (0-based) coded into the snapshot.
    pub coded_frames: Vec<usize>,
    pub coded_frame_interval_us: u64,
    pub event_count: usize,
    pub sub_seeds: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructDetails {
    pub label: String,
    pub registration: bool,
    pub iterations_run: usize,
    pub final_residual: f64,
    pub mean_psnr_db: Option<f64>,
    pub mean_ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensifyDetails {
    pub n_out: usize,
    pub timestamps_us: Vec<u64>,
    pub mean_psnr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconOutput {
    pub label: String,
    pub settings: ReconSettings,
    pub report: ReconReport,
}

/// One row of the densify evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseFrameMetric {
    pub index: usize,
    pub timestamp_us: u64,
    /// Ground-truth frame matched by timestamp.
    pub gt_index: usize,
    pub metric: FrameMetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestampManifest {
    pub frame_interval_us: u64,
    pub timestamps_us: Vec<u64>,
}

/// Tracks files written under the output directory.
struct Out {
    root: PathBuf,
    files: Vec<PathBuf>,
}

impl Out {
    fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| evsci_core::Error::Io { path: root.to_path_buf(), source: e })?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    fn rel(&self, p: &Path) -> PathBuf {
        p.strip_prefix(&self.root).unwrap_or(p).to_path_buf()
    }

    fn record(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        let rel: Vec<PathBuf> = paths.into_iter().map(|p| self.rel(&p)).collect();
        self.files.extend(rel);
    }

    fn frames(&mut self, stem: &str, seq: &FrameSequence, format: FrameFormat) -> Result<PathBuf> {
        let path = frames_path(&self.root, stem, format);
        save_frames(seq, &path, format)?;
        self.record(saved_files(&path, format, seq.count()));
        Ok(self.rel(&path))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.root.join(name);
        write_json(&path, value)?;
        self.record([path.clone()]);
        Ok(self.rel(&path))
    }

    fn text(&mut self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.root.join(name);
        fs::write(&path, body).map_err(|e| evsci_core::Error::Io { path: path.clone(), source: e })?;
        self.record([path.clone()]);
        Ok(self.rel(&path))
    }

    fn finish<D: Serialize>(
        mut self,
        command: &str,
        artifacts: BTreeMap<String, PathBuf>,
        details: D,
        cfg: &PipelineConfig,
    ) -> Result<Manifest<D>> {
        let name = manifest_name(command);
        self.files.push(PathBuf::from(&name));
        let manifest = Manifest {
            command: command.to_string(),
            artifacts,
            files: self.files,
            details,
            config: cfg.for_manifest(),
        };
        write_json(&self.root.join(name), &manifest)?;
        Ok(manifest)
    }
}

fn frames_path(root: &Path, stem: &str, format: FrameFormat) -> PathBuf {
    match format {
        FrameFormat::RawF32 => root.join(format!("{stem}.raw")),
        FrameFormat::PgmDir => root.join(stem),
    }
}

fn read_manifest<D: for<'de> Deserialize<'de>>(root: &Path, command: &str) -> Result<Manifest<D>> {
    let path = root.join(manifest_name(command));
    if !path.is_file() {
        return Err(CliError::missing(&path, format!("run `{command}` first")));
    }
    artifact(&path, read_json(&path))
}

fn named(root: &Path, artifacts: &BTreeMap<String, PathBuf>, name: &str) -> Result<PathBuf> {
    artifacts
        .get(name)
        .map(|p| root.join(p))
        .ok_or_else(|| CliError::missing(root, format!("manifest lists no `{name}` artifact")))
}

fn format_of(path: &Path) -> FrameFormat {
    if path.is_dir() {
        FrameFormat::PgmDir
    } else {
        FrameFormat::RawF32
    }
}

fn load_sequence(path: &Path) -> Result<FrameSequence> {
    Ok(artifact(path, load_frames(path, format_of(path)))?.0)
}

/// Artifacts of a simulation run, in memory.
#[derive(Debug, Clone)]
pub struct SimulationArtifacts {
    pub gt: FrameSequence,
    pub masks: MaskStack,
    pub snapshot: Snapshot,
    pub events: EventStream,
    pub details: SimulateDetails,
}

impl SimulationArtifacts {
    pub fn load(root: &Path) -> Result<Self> {
        let m: Manifest<SimulateDetails> = read_manifest(root, "simulate")?;
        let masks_path = named(root, &m.artifacts, "masks")?;
        let snap_path = named(root, &m.artifacts, "snapshot")?;
        let events_path = named(root, &m.artifacts, "events")?;
        Ok(Self {
            gt: load_sequence(&named(root, &m.artifacts, "frames")?)?,
            masks: artifact(&masks_path, read_masks(&masks_path))?,
            snapshot: artifact(&snap_path, read_snapshot(&snap_path))?,
            events: artifact(&events_path, read_events(&events_path))?,
            details: m.details,
        })
    }

    pub fn coded_frame_interval(&self) -> f64 {
        self.details.coded_frame_interval_us as f64 * 1e-6
    }

    pub fn coded_ground_truth(&self) -> Result<FrameSequence> {
        let frames = self.details.coded_frames.iter().map(|&k| self.gt.frame(k).clone()).collect();
        Ok(FrameSequence::new(frames, self.coded_frame_interval())?)
    }

    pub fn slices(&self) -> Result<Vec<EventSlice<'_>>> {
        Ok(split_by_frames(&self.events, self.masks.len(), self.coded_frame_interval())?)
    }
}

/// Renders (or loads) ground truth, codes it, simulates events and writes
/// frames, masks, snapshot and events.
pub fn cmd_simulate(cfg: &PipelineConfig) -> Result<Manifest<SimulateDetails>> {
    let b = cfg.sensor.compression_ratio;
    let gt = match &cfg.scene.input {
        Some(path) => artifact(path, load_frames(path, cfg.scene.input_format))?.0,
        None => synthesize(&cfg.scene_spec(cfg.frame_interval()))?,
    };
    let step = if gt.count() == b {
        1
    } else if gt.count() == 2 * b {
        2
    } else {
        return Err(CliError::Config(format!(
            "{} ground-truth frames cannot be coded with B = {b}; need B or 2B",
            gt.count()
        )));
    };
    let coded = gt.subsample(0, step)?;
    let sensor = cfg.sensor_config();
    let masks = generate_masks(&sensor, gt.dims())?;
    let noise_seed = sub_seed(cfg.seed, "noise");
    let snapshot = encode(&coded, &masks, sensor.noise_sigma, noise_seed)?;
    let cam = cfg.camera(gt.dims());
    let events = simulate_events(&gt, &cam)?;
    log::info!("simulated {} frames, {} events, B = {b}", gt.count(), events.len());

    let mut out = Out::new(&cfg.output_dir)?;
    let mut artifacts = BTreeMap::new();
    artifacts.insert("frames".to_string(), out.frames("gt_frames", &gt, cfg.io.format)?);
    let masks_path = out.root.join("masks.bin");
    write_masks(&masks, &masks_path)?;
    out.record([masks_path.clone(), sidecar_path(&masks_path)]);
    artifacts.insert("masks".to_string(), out.rel(&masks_path));
    let snap_path = out.root.join("snapshot.raw");
    write_snapshot(&snapshot, &snap_path)?;
    out.record([snap_path.clone(), sidecar_path(&snap_path)]);
    artifacts.insert("snapshot".to_string(), out.rel(&snap_path));
    let events_path = out.root.join(format!("events.{}", cfg.io.events_format.extension()));
    write_events(&events, &events_path, cfg.io.events_format)?;
    out.record([events_path.clone(), sidecar_path(&events_path)]);
    artifacts.insert("events".to_string(), out.rel(&events_path));

    let details = SimulateDetails {
        gt_frame_count: gt.count(),
        gt_frame_interval_us: gt.frame_interval_us(),
        coded_frames: (0..gt.count()).step_by(step).collect(),
        coded_frame_interval_us: coded.frame_interval_us(),
        event_count: events.len(),
        sub_seeds: BTreeMap::from([
            ("scene".to_string(), cfg.scene_spec(0.0).seed),
            ("masks".to_string(), sensor.seed),
            ("noise".to_string(), noise_seed),
        ]),
    };
    out.finish("simulate", artifacts, details, cfg)
}

/// Per-patch registration of the whole-exposure event image against the
/// normalized snapshot.
pub fn register(sim: &SimulationArtifacts, cfg: &PipelineConfig) -> Result<Vec<RegistrationResult>> {
    let dims = sim.masks.dims();
    let (t_a, t_b) = sim.events.span();
    let image = accumulate_image(&EventSlice::of(&sim.events, t_a, t_b), dims);
    let normalized = normalize_measurement(&sim.snapshot, &sim.masks)?;
    Ok(register_patches(&image.data, &normalized.data, cfg.registration.patch_size, &cfg.registration.search)?)
}

/// Decodes the snapshot, optionally registering the event arm first, and
/// scores the result when ground truth is available.
pub fn cmd_reconstruct(cfg: &PipelineConfig) -> Result<Manifest<ReconstructDetails>> {
    let root = &cfg.output_dir;
    let sim = SimulationArtifacts::load(root)?;
    let fused = cfg.recon.event_weight > 0.0;
    let label = if fused { LABEL_FUSED } else { LABEL_INTENSITY_ONLY };
    let cam = cfg.camera(sim.masks.dims());

    let mut out = Out::new(root)?;
    let mut artifacts = BTreeMap::new();
    let maps = if fused {
        let mut maps = event_maps(&sim.slices()?, sim.masks.dims());
        if cfg.registration.enabled {
            let patches = register(&sim, cfg)?;
            let path = root.join("registration.json");
            write_registration(&path, &patches)?;
            out.record([path.clone()]);
            artifacts.insert("registration".to_string(), out.rel(&path));
            maps = maps.iter().map(|m| apply_patch_transforms(m, &patches)).collect();
        }
        Some(maps)
    } else {
        None
    };

    let rec = reconstruct_with_maps(&sim.snapshot, &sim.masks, maps.as_deref(), &cam, &cfg.recon, None)?;
    log::info!(
        "{label}: {} iterations, residual {:.3e}, {:.2} s",
        rec.report.iterations_run,
        rec.report.final_residual,
        rec.report.wall_time
    );
    let (frames, report) = rec.into_sequence(sim.coded_frame_interval())?;
    artifacts.insert("frames".to_string(), out.frames("recon_frames", &frames, cfg.io.format)?);
    let recon_out = ReconOutput { label: label.to_string(), settings: cfg.recon.clone(), report: report.clone() };
    artifacts.insert("report".to_string(), out.json("recon_report.json", &recon_out)?);

    let metrics = evaluate_sequence(&frames, &sim.coded_ground_truth()?)?;
    artifacts.insert("metrics".to_string(), out.json("metrics.json", &metrics)?);
    out.text("metrics.csv", &metrics.to_csv())?;

    let details = ReconstructDetails {
        label: label.to_string(),
        registration: fused && cfg.registration.enabled,
        iterations_run: report.iterations_run,
        final_residual: report.final_residual,
        mean_psnr_db: metrics.mean_psnr_db,
        mean_ssim: Some(metrics.mean_ssim),
    };
    out.finish("reconstruct", artifacts, details, cfg)
}

/// Interpolates `interp.n_out` frames across the exposure from the decoded
/// frames and events; scores frames whose timestamps hit ground truth.
pub fn cmd_densify(cfg: &PipelineConfig) -> Result<Manifest<DensifyDetails>> {
    let root = &cfg.output_dir;
    let sim = SimulationArtifacts::load(root)?;
    let rec: Manifest<ReconstructDetails> = read_manifest(root, "reconstruct")?;
    let frames = load_sequence(&named(root, &rec.artifacts, "frames")?)?;
    let cam = cfg.camera(frames.dims());
    let dense = densify(&frames, &sim.events, cfg.interp.n_out, &cam, cfg.interp.blend)?;

    let mut out = Out::new(root)?;
    let mut artifacts = BTreeMap::new();
    artifacts.insert("frames".to_string(), out.frames("dense_frames", &dense.frames, cfg.io.format)?);
    let stamps = TimestampManifest {
        frame_interval_us: dense.frames.frame_interval_us(),
        timestamps_us: dense.timestamps_us.clone(),
    };
    artifacts.insert("timestamps".to_string(), out.json("dense_timestamps.json", &stamps)?);

    let gt_interval = sim.details.gt_frame_interval_us.max(1);
    let sync = sim.events.sync_t();
    let mut rows = Vec::new();
    for (index, &t) in dense.timestamps_us.iter().enumerate() {
        let offset = t - sync;
        let gt_index = (offset / gt_interval) as usize;
        if offset % gt_interval == 0 && gt_index < sim.gt.count() {
            rows.push(DenseFrameMetric {
                index,
                timestamp_us: t,
                gt_index,
                metric: frame_metric(dense.frames.frame(index), sim.gt.frame(gt_index))?,
            });
        }
    }
    let summary = MetricReport::from_frames(rows.iter().map(|r| r.metric.clone()).collect());
    if !rows.is_empty() {
        artifacts.insert("metrics".to_string(), out.json("dense_metrics.json", &rows)?);
        out.text("dense_metrics.csv", &dense_csv(&rows))?;
    }
    let details = DensifyDetails {
        n_out: cfg.interp.n_out,
        timestamps_us: dense.timestamps_us,
        mean_psnr_db: summary.mean_psnr_db,
    };
    out.finish("densify", artifacts, details, cfg)
}

fn dense_csv(rows: &[DenseFrameMetric]) -> String {
    let mut s = String::from("frame,timestamp_us,gt_frame,psnr_db,ssim\n");
    for r in rows {
        let psnr = r.metric.psnr_db.map_or_else(|| "inf".to_string(), |p| format!("{p:.6}"));
        s.push_str(&format!("{},{},{},{psnr},{:.6}\n", r.index + 1, r.timestamp_us, r.gt_index + 1, r.metric.ssim));
    }
    s
}

/// Scores `pred` against `gt`; both may be raw_f32 files or PGM directories.
pub fn cmd_evaluate(cfg: &PipelineConfig, pred: &Path, gt: &Path) -> Result<Manifest<MetricReport>> {
    let report = evaluate_sequence(&load_sequence(pred)?, &load_sequence(gt)?)?;
    let mut out = Out::new(&cfg.output_dir)?;
    let mut artifacts = BTreeMap::new();
    artifacts.insert("metrics".to_string(), out.json("evaluation.json", &report)?);
    out.text("evaluation.csv", &report.to_csv())?;
    out.finish("evaluate", artifacts, report, cfg)
}

/// Registration on its own, whatever `registration.enabled` says.
pub fn cmd_register(cfg: &PipelineConfig) -> Result<Manifest<Vec<RegistrationResult>>> {
    let sim = SimulationArtifacts::load(&cfg.output_dir)?;
    let patches = register(&sim, cfg)?;
    let mut out = Out::new(&cfg.output_dir)?;
    let path = out.root.join("register_patches.json");
    write_registration(&path, &patches)?;
    out.record([path.clone()]);
    let artifacts = BTreeMap::from([("registration".to_string(), out.rel(&path))]);
    out.finish("register", artifacts, patches, cfg)
}

/// Converts an event file (format from its extension) into `io.events_format`.
pub fn cmd_events(cfg: &PipelineConfig, input: &Path) -> Result<Manifest<usize>> {
    let stream = artifact(input, read_events(input))?;
    let format: EventFormat = cfg.io.events_format;
    let mut out = Out::new(&cfg.output_dir)?;
    let path = out.root.join(format!("events_converted.{}", format.extension()));
    write_events(&stream, &path, format)?;
    out.record([path.clone(), sidecar_path(&path)]);
    let artifacts = BTreeMap::from([("events".to_string(), out.rel(&path))]);
    out.finish("events", artifacts, stream.len(), cfg)
}
