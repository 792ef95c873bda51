//! Multi-object tracking and classroom event engine.
//!
//! Per-frame detections (faces, phones, sleep-state classifications) go
//! through a SORT tracker per channel, face tracks are bound to a student
//! gallery by embedding similarity, and sleep and phone-usage events are
//! debounced into a session log. See [`io::session`] for the end-to-end
//! pipeline.

pub mod assignment;
pub mod events;
pub mod geometry;
pub mod io;
pub mod kalman;
pub mod model_math;
pub mod recognition;
pub mod timefmt;
pub mod tracker;

pub use geometry::{BoundingBox, Channel, ClassLabel, Detection, ObsVector};
