//! Axis-aligned boxes, class labels, detections and the `(x, y, s, r)`
//! observation form used by the tracker.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box coordinates must be finite, got [{0}, {1}, {2}, {3}]")]
    NonFinite(f64, f64, f64, f64),
    #[error("box must have positive width and height, got [{0}, {1}, {2}, {3}]")]
    Degenerate(f64, f64, f64, f64),
    #[error("observation must have positive finite scale and aspect ratio (s = {s}, r = {r})")]
    DegenerateObservation { s: f64, r: f64 },
    #[error("unknown class label `{0}`")]
    UnknownLabel(String),
}

/// Corner-form box in continuous pixel coordinates.
///
/// Always satisfies `x2 > x1`, `y2 > y1` with finite coordinates; the
/// only way to build one is through [`BoundingBox::new`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(into = "[f64; 4]")]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite(x1, y1, x2, y2));
        }
        if !(x2 > x1 && y2 > y1) {
            return Err(GeometryError::Degenerate(x1, y1, x2, y2));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self, GeometryError> {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = <[f64; 4]>::deserialize(d)?;
        BoundingBox::try_from(raw).map_err(serde::de::Error::custom)
    }
}

/// Detector output classes. Anything else in a stream is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassLabel {
    Face,
    Phone,
    SleepAwake,
    SleepDrowsy,
    SleepAsleep,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 5] = [
        ClassLabel::Face,
        ClassLabel::Phone,
        ClassLabel::SleepAwake,
        ClassLabel::SleepDrowsy,
        ClassLabel::SleepAsleep,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ClassLabel::Face => "face",
            ClassLabel::Phone => "phone",
            ClassLabel::SleepAwake => "sleep_awake",
            ClassLabel::SleepDrowsy => "sleep_drowsy",
            ClassLabel::SleepAsleep => "sleep_asleep",
        }
    }

    pub fn is_sleep(&self) -> bool {
        self.channel() == Channel::Sleep
    }

    pub fn channel(&self) -> Channel {
        match self {
            ClassLabel::Face => Channel::Face,
            ClassLabel::Phone => Channel::Phone,
            ClassLabel::SleepAwake | ClassLabel::SleepDrowsy | ClassLabel::SleepAsleep => {
                Channel::Sleep
            }
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClassLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| GeometryError::UnknownLabel(s.to_string()))
    }
}

impl Serialize for ClassLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ClassLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Tracker channel. The three sleep labels share one channel because they
/// describe the same physical head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Face,
    Phone,
    Sleep,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Face, Channel::Phone, Channel::Sleep];

    pub fn as_str(&self) -> &'static str {
        match self {
            Channel::Face => "face",
            Channel::Phone => "phone",
            Channel::Sleep => "sleep",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single detector output for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_index: u64,
    pub timestamp: f64,
    pub label: ClassLabel,
    pub bbox: BoundingBox,
    pub confidence: f64,
    /// Unit-norm face embedding.
    pub embedding: Option<Vec<f64>>,
    /// Sleep-state logits, ordered `[awake, drowsy, asleep]`.
    pub logits: Option<Vec<f64>>,
}

/// Observation form: center, area, and width/height ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsVector {
    pub x: f64,
    pub y: f64,
    pub s: f64,
    pub r: f64,
}

/// Intersection over union. Exactly `0.0` for boxes that do not overlap.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn bbox_to_obs(b: &BoundingBox) -> ObsVector {
    let (x, y) = b.center();
    let w = b.width();
    let h = b.height();
    ObsVector {
        x,
        y,
        s: w * h,
        r: w / h,
    }
}

/// Inverse of [`bbox_to_obs`]. Fails on non-positive scale or ratio, which
/// is what a diverged Kalman state looks like.
pub fn obs_to_bbox(o: &ObsVector) -> Result<BoundingBox, GeometryError> {
    if !(o.s > 0.0 && o.r > 0.0 && o.s.is_finite() && o.r.is_finite()) {
        return Err(GeometryError::DegenerateObservation { s: o.s, r: o.r });
    }
    let w = (o.s * o.r).sqrt();
    let h = o.s / w;
    BoundingBox::from_center(o.x, o.y, w, h)
}
