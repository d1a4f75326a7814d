//! Shared fixtures for the benchmarks.

use evsci_core::events::simulate_events;
use evsci_core::repr::{split_by_frames, EventSlice};
use evsci_core::scene::synthesize;
use evsci_core::sci::{encode, generate_masks};
use evsci_core::{
    EventCameraModel, EventStream, FrameSequence, MaskStack, SceneKind, SceneSpec, SensorConfig, Snapshot,
};

/// A coded translating-square exposure with its events.
pub struct Fixture {
    pub frames: FrameSequence,
    pub masks: MaskStack,
    pub snapshot: Snapshot,
    pub camera: EventCameraModel,
    pub stream: EventStream,
}

impl Fixture {
    pub fn new(size: usize, b: usize) -> Self {
        let spec = SceneSpec {
            kind: SceneKind::TranslatingSquare,
            height: size,
            width: size,
            count: b,
            ..SceneSpec::default()
        };
        let frames = synthesize(&spec).unwrap();
        let sensor = SensorConfig { compression_ratio: b, ..SensorConfig::default() };
        let masks = generate_masks(&sensor, frames.dims()).unwrap();
        let snapshot = encode(&frames, &masks, 0.0, sensor.seed).unwrap();
        let camera = EventCameraModel::for_dims(frames.dims());
        let stream = simulate_events(&frames, &camera).unwrap();
        Fixture { frames, masks, snapshot, camera, stream }
    }

    pub fn slices(&self) -> Vec<EventSlice<'_>> {
        split_by_frames(&self.stream, self.masks.len(), self.frames.frame_interval()).unwrap()
    }
}
