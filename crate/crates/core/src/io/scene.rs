//! Scripted synthetic scenes: piecewise-linear trajectories rendered into a
//! detection stream plus the exact ground truth behind it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundingBox, ClassLabel};
use crate::io::records::{StreamRecord, TruthRecord};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid scene script: {0}")]
pub struct SceneError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelChange {
    pub t: f64,
    pub label: ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub label: ClassLabel,
    pub waypoints: Vec<Waypoint>,
    /// `[start, end)` intervals in seconds; visible throughout when absent.
    #[serde(default)]
    pub visible: Option<Vec<[f64; 2]>>,
    /// Label switches for sleep-channel objects, ordered by time.
    #[serde(default)]
    pub label_changes: Vec<LabelChange>,
    /// Gallery student this face belongs to.
    #[serde(default)]
    pub identity: Option<String>,
    #[serde(default)]
    pub embedding: Option<Vec<f64>>,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

fn default_confidence() -> f64 {
    0.9
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Standard deviation of the center jitter, pixels.
    pub center_jitter: f64,
    pub drop_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    pub fps: f64,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseModel,
    pub objects: Vec<SceneObject>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub truth: Vec<TruthRecord>,
    pub detections: Vec<StreamRecord>,
}

impl SceneObject {
    fn box_at(&self, t: f64) -> Waypoint {
        let wp = &self.waypoints;
        if t <= wp[0].t {
            return wp[0];
        }
        let last = wp[wp.len() - 1];
        if t >= last.t {
            return last;
        }
        let k = wp.partition_point(|w| w.t <= t);
        let (a, b) = (wp[k - 1], wp[k]);
        let u = (t - a.t) / (b.t - a.t);
        let lerp = |p: f64, q: f64| p + (q - p) * u;
        Waypoint {
            t,
            cx: lerp(a.cx, b.cx),
            cy: lerp(a.cy, b.cy),
            w: lerp(a.w, b.w),
            h: lerp(a.h, b.h),
        }
    }

    fn visible_at(&self, t: f64) -> bool {
        self.visible
            .as_ref()
            .is_none_or(|iv| iv.iter().any(|[a, b]| *a <= t && t < *b))
    }

    fn label_at(&self, t: f64) -> ClassLabel {
        self.label_changes
            .iter()
            .take_while(|c| c.t <= t)
            .last()
            .map_or(self.label, |c| c.label)
    }
}

impl SceneScript {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError(m));
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be non-negative, got {}", self.duration));
        }
        if !(0.0..=1.0).contains(&self.noise.drop_probability) {
            return bad("drop_probability must be in [0, 1]".into());
        }
        if !(self.noise.center_jitter >= 0.0 && self.noise.center_jitter.is_finite()) {
            return bad("center_jitter must be non-negative".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.waypoints.is_empty() {
                return bad(format!("object {i} has no waypoints"));
            }
            if o.waypoints.windows(2).any(|w| w[0].t.partial_cmp(&w[1].t) != Some(std::cmp::Ordering::Less)) {
                return bad(format!("object {i} waypoints must have increasing t"));
            }
            if o.waypoints.iter().any(|w| !(w.w > 0.0 && w.h > 0.0)) {
                return bad(format!("object {i} waypoints need positive w and h"));
            }
            if o.label_changes.iter().any(|c| c.label.channel() != o.label.channel()) {
                return bad(format!("object {i} label changes must stay in the {} channel", o.label.channel()));
            }
            if o.embedding.is_some() && o.label != ClassLabel::Face {
                return bad(format!("object {i}: only faces carry embeddings"));
            }
            if !(0.0..=1.0).contains(&o.confidence) {
                return bad(format!("object {i}: confidence must be in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn frame_count(&self) -> u64 {
        (self.duration * self.fps + 1e-9).floor() as u64
    }
}

/// Renders the scene. Same script and seed, same bytes.
pub fn generate_scene(script: &SceneScript) -> Result<GeneratedScene, SceneError> {
    script.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    let jitter = (script.noise.center_jitter > 0.0)
        .then(|| Normal::new(0.0, script.noise.center_jitter).expect("validated sigma"));
    let mut truth = Vec::new();
    let mut detections = Vec::new();
    for frame in 0..script.frame_count() {
        let ts = frame as f64 / script.fps;
        for (id, obj) in script.objects.iter().enumerate() {
            if !obj.visible_at(ts) {
                continue;
            }
            let wp = obj.box_at(ts);
            let label = obj.label_at(ts);
            let exact = BoundingBox::from_center(wp.cx, wp.cy, wp.w, wp.h)
                .map_err(|e| SceneError(format!("object {id} at t={ts}: {e}")))?;
            truth.push(TruthRecord {
                frame,
                ts,
                object_id: id as u64,
                label: label.to_string(),
                bbox: exact.to_array(),
                identity: obj.identity.clone(),
            });
            if script.noise.drop_probability > 0.0 && rng.random::<f64>() < script.noise.drop_probability {
                continue;
            }
            let (dx, dy) = match &jitter {
                Some(n) => (n.sample(&mut rng), n.sample(&mut rng)),
                None => (0.0, 0.0),
            };
            let noisy = BoundingBox::from_center(wp.cx + dx, wp.cy + dy, wp.w, wp.h)
                .map_err(|e| SceneError(format!("object {id} at t={ts}: {e}")))?;
            detections.push(StreamRecord {
                frame,
                ts,
                label: label.to_string(),
                bbox: noisy.to_array(),
                conf: obj.confidence,
                embedding: obj.embedding.clone(),
                logits: None,
            });
        }
    }
    Ok(GeneratedScene { truth, detections })
}
