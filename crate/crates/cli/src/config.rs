//! Pipeline configuration.
//!
//! Values resolve in order: built-in defaults, then the TOML file given with
//! `--config`, then each `--set section.key=value`, then dedicated flags
//! (`--seed`, `--output`, `--format`, `--events-format`, `--no-events`).

use std::fs;
use std::path::{Path, PathBuf};

use evsci_core::interp::Blend;
use evsci_core::recon::ReconSettings;
use evsci_core::registration::SearchConfig;
use evsci_core::{Dims, EventCameraModel, EventFormat, FrameFormat, SceneKind, SceneSpec, SensorConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub kind: SceneKind,
    pub height: usize,
    pub width: usize,
    /// Ground-truth frames rendered; must be `B` or `2B`.
    pub count: usize,
    pub velocity: f64,
    pub background: f64,
    pub foreground: f64,
    /// Load ground truth from here instead of rendering it.
    pub input: Option<PathBuf>,
    pub input_format: FrameFormat,
}

impl Default for SceneSection {
    fn default() -> Self {
        let spec = SceneSpec::default();
        Self {
            kind: spec.kind,
            height: spec.height,
            width: spec.width,
            count: spec.count,
            velocity: spec.velocity,
            background: spec.background,
            foreground: spec.foreground,
            input: None,
            input_format: FrameFormat::RawF32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSection {
    pub compression_ratio: usize,
    pub mask_density: f64,
    pub noise_sigma: f64,
    /// Snapshots per second.
    pub frame_rate: f64,
}

impl Default for SensorSection {
    fn default() -> Self {
        let s = SensorConfig::default();
        Self {
            compression_ratio: s.compression_ratio,
            mask_density: s.mask_density,
            noise_sigma: s.noise_sigma,
            frame_rate: s.frame_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSection {
    pub threshold: f64,
    pub log_eps: f64,
    pub timestamp_resolution_us: u64,
}

impl Default for CameraSection {
    fn default() -> Self {
        let c = EventCameraModel::default();
        Self { threshold: c.threshold, log_eps: c.log_eps, timestamp_resolution_us: c.timestamp_resolution_us }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpSection {
    pub n_out: usize,
    pub blend: Blend,
}

impl Default for InterpSection {
    fn default() -> Self {
        Self { n_out: 16, blend: Blend::LinearTime }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationSection {
    pub enabled: bool,
    pub patch_size: usize,
    pub search: SearchConfig,
}

impl Default for RegistrationSection {
    fn default() -> Self {
        Self { enabled: false, patch_size: 64, search: SearchConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub format: FrameFormat,
    pub events_format: EventFormat,
}

impl Default for IoSection {
    fn default() -> Self {
        Self { format: FrameFormat::RawF32, events_format: EventFormat::Bin16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub scene: SceneSection,
    pub sensor: SensorSection,
    pub camera: CameraSection,
    pub recon: ReconSettings,
    pub interp: InterpSection,
    pub registration: RegistrationSection,
    pub io: IoSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("evsci_out"),
            scene: SceneSection::default(),
            sensor: SensorSection::default(),
            camera: CameraSection::default(),
            recon: ReconSettings::default(),
            interp: InterpSection::default(),
            registration: RegistrationSection::default(),
            io: IoSection::default(),
        }
    }
}

/// Command-line inputs to [`PipelineConfig::resolve`].
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    /// `section.key=value`; the value is parsed as TOML, falling back to a
    /// bare string.
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub no_events: bool,
    pub format: Option<FrameFormat>,
    pub events_format: Option<EventFormat>,
}

impl PipelineConfig {
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let mut table = toml::Table::try_from(PipelineConfig::default())
            .map_err(|e| CliError::Config(format!("default config: {e}")))?;
        if let Some(path) = &o.config {
            merge(&mut table, read_table(path)?);
        }
        for set in &o.sets {
            apply_set(&mut table, set)?;
        }
        let mut cfg: PipelineConfig = table.try_into().map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(seed) = o.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &o.output {
            cfg.output_dir = out.clone();
        }
        if let Some(f) = o.format {
            cfg.io.format = f;
        }
        if let Some(f) = o.events_format {
            cfg.io.events_format = f;
        }
        if o.no_events {
            cfg.recon.event_weight = 0.0;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene_spec(1e-3).validate()?;
        self.sensor_config().validate()?;
        self.recon.validate()?;
        self.registration.search.validate()?;
        if self.scene.input.is_none() {
            let (count, b) = (self.scene.count, self.sensor.compression_ratio);
            if count != b && count != 2 * b {
                return Err(CliError::Config(format!("scene.count = {count} must equal B = {b} or 2B = {}", 2 * b)));
            }
        }
        if self.interp.n_out == 0 {
            return Err(CliError::Config("interp.n_out must be at least 1".into()));
        }
        if self.registration.patch_size == 0 {
            return Err(CliError::Config("registration.patch_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Ground-truth frame interval: one snapshot exposure split over
    /// `scene.count` frames, rounded to whole microseconds.
    pub fn frame_interval(&self) -> f64 {
        let count = self.scene.count.max(1) as f64;
        (1e6 / (self.sensor.frame_rate * count)).round() / 1e6
    }

    pub fn scene_spec(&self, frame_interval: f64) -> SceneSpec {
        SceneSpec {
            kind: self.scene.kind,
            height: self.scene.height,
            width: self.scene.width,
            count: self.scene.count,
            velocity: self.scene.velocity,
            background: self.scene.background,
            foreground: self.scene.foreground,
            seed: sub_seed(self.seed, "scene"),
            frame_interval,
        }
    }

    pub fn sensor_config(&self) -> SensorConfig {
        SensorConfig {
            compression_ratio: self.sensor.compression_ratio,
            mask_density: self.sensor.mask_density,
            noise_sigma: self.sensor.noise_sigma,
            seed: sub_seed(self.seed, "masks"),
            frame_rate: self.sensor.frame_rate,
        }
    }

    pub fn camera(&self, dims: Dims) -> EventCameraModel {
        EventCameraModel {
            threshold: self.camera.threshold,
            log_eps: self.camera.log_eps,
            timestamp_resolution_us: self.camera.timestamp_resolution_us,
            ..EventCameraModel::for_dims(dims)
        }
    }

    /// The config as recorded in manifests: the output directory is left out
    /// so identical runs into different directories match byte for byte.
    pub fn for_manifest(&self) -> Self {
        Self { output_dir: PathBuf::new(), ..self.clone() }
    }
}

/// First 8 bytes (little-endian) of SHA-256 over `"{seed}:{module}"`.
pub fn sub_seed(seed: u64, module: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}:{module}").as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

fn read_table(path: &Path) -> Result<toml::Table> {
    let text = fs::read_to_string(path).map_err(|e| CliError::missing(path, e))?;
    text.parse::<toml::Table>().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn merge(base: &mut toml::Table, other: toml::Table) {
    for (k, v) in other {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn apply_set(table: &mut toml::Table, set: &str) -> Result<()> {
    let (key, raw) =
        set.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {set:?}")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut node = table;
    for p in parents {
        let entry = node.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| CliError::Config(format!("--set {key}: {p} is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}
