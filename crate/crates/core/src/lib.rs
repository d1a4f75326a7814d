//! Simulation and model-based reconstruction for event-enhanced video
//! snapshot compressive imaging.
//!
//! The pipeline: [`scene`] renders ground-truth frames, [`sci`] codes them
//! into a snapshot, [`events`] simulates the co-located event camera,
//! [`repr`] slices and bins the events, [`registration`] aligns the event
//! arm with the intensity arm, [`recon`] decodes the coded frames and
//! [`interp`] fills in arbitrary timestamps. [`metrics`] scores results.

pub mod error;
pub mod events;
pub mod frame;
pub mod interp;
pub mod metrics;
pub mod rawio;
pub mod recon;
pub mod registration;
pub mod repr;
pub mod scene;
pub mod sci;

pub use error::{Error, Result};
pub use events::{Event, EventCameraModel, EventFormat, EventStream};
pub use frame::{Dims, Frame, FrameSequence};
pub use scene::{FrameFormat, SceneKind, SceneSpec};
pub use sci::{MaskStack, SensorConfig, Snapshot};
