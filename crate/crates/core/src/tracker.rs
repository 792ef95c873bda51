//! SORT track lifecycle, one independent tracker per [`Channel`].
//!
//! Each frame a channel predicts every live track, associates the frame's
//! detections to the predicted boxes, corrects matched tracks, spawns
//! tracks for leftover detections and drops tracks that went unmatched for
//! more than `max_age` frames.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::associate_predicted;
use crate::geometry::{bbox_to_obs, obs_to_bbox, BoundingBox, Channel, ClassLabel, Detection};
use crate::kalman::{self, KalmanConfig, KalmanDiagonals, KalmanError, KalmanState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("frame index {got} is not greater than previous frame {previous}")]
    NonMonotoneFrame { previous: u64, got: u64 },
    #[error("detection {index} carries frame index {got}, expected {expected}")]
    MixedFrame { index: usize, got: u64, expected: u64 },
    #[error("label {label} does not belong to channel {channel}")]
    WrongChannel { label: ClassLabel, channel: Channel },
    #[error("invalid tracker configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub iou_threshold: f64,
    pub max_age: u32,
    pub min_hits: u32,
    pub kalman: KalmanDiagonals,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.3,
            max_age: 3,
            min_hits: 3,
            kalman: KalmanDiagonals::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<KalmanConfig, TrackerError> {
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(TrackerError::Config(format!(
                "iou_threshold must be in [0, 1], got {}",
                self.iou_threshold
            )));
        }
        if self.max_age < 1 {
            return Err(TrackerError::Config("max_age must be >= 1".into()));
        }
        if self.min_hits < 1 {
            return Err(TrackerError::Config("min_hits must be >= 1".into()));
        }
        Ok(KalmanConfig::from_diagonals(&self.kalman)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    /// Label of the most recent detection.
    pub label: ClassLabel,
    pub state: KalmanState,
    pub hits: u32,
    pub hit_streak: u32,
    pub age: u32,
    pub time_since_update: u32,
    pub last_confidence: f64,
}

impl Track {
    pub fn bbox(&self) -> Option<BoundingBox> {
        obs_to_bbox(&self.state.observation()).ok()
    }
}

/// One track reported for the current frame. Only tracks corrected by a
/// detection this frame are reported; `detection` indexes the frame batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub channel: Channel,
    pub id: u64,
    pub label: ClassLabel,
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub detection: usize,
    pub confirmed: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameTracks {
    pub frame_index: u64,
    /// Channel order, then track id order.
    pub updated: Vec<TrackOutput>,
    pub retired: Vec<(Channel, u64)>,
}

impl FrameTracks {
    pub fn confirmed(&self) -> impl Iterator<Item = &TrackOutput> {
        self.updated.iter().filter(|t| t.confirmed)
    }

    pub fn confirmed_in(&self, channel: Channel) -> impl Iterator<Item = &TrackOutput> {
        self.confirmed().filter(move |t| t.channel == channel)
    }
}

#[derive(Debug, Clone)]
pub struct ChannelTracker {
    channel: Channel,
    config: TrackerConfig,
    kalman: KalmanConfig,
    tracks: Vec<Track>,
    next_id: u64,
    frames_seen: u64,
}

impl ChannelTracker {
    pub fn new(channel: Channel, config: TrackerConfig) -> Result<Self, TrackerError> {
        let kalman = config.validate()?;
        Ok(Self {
            channel,
            config,
            kalman,
            tracks: Vec::new(),
            next_id: 1,
            frames_seen: 0,
        })
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Runs one frame. `detections` are `(batch index, detection)` pairs that
    /// all belong to this channel.
    pub fn step(
        &mut self,
        detections: &[(usize, &Detection)],
    ) -> Result<(Vec<TrackOutput>, Vec<u64>), TrackerError> {
        if let Some((_, d)) = detections.iter().find(|(_, d)| d.label.channel() != self.channel) {
            return Err(TrackerError::WrongChannel {
                label: d.label,
                channel: self.channel,
            });
        }
        self.frames_seen += 1;

        let mut predicted = Vec::with_capacity(self.tracks.len());
        for track in &mut self.tracks {
            track.state = kalman::predict(&track.state, &self.kalman);
            track.age += 1;
            if track.time_since_update > 0 {
                track.hit_streak = 0;
            }
            track.time_since_update += 1;
            predicted.push(track.bbox());
        }

        let boxes: Vec<BoundingBox> = detections.iter().map(|(_, d)| d.bbox).collect();
        let assoc = associate_predicted(&boxes, &predicted, self.config.iou_threshold);

        let mut source: Vec<Option<usize>> = vec![None; self.tracks.len()];
        for m in &assoc.matches {
            let (batch_index, det) = detections[m.detection];
            let track = &mut self.tracks[m.track];
            track.state = kalman::update(&track.state, &bbox_to_obs(&det.bbox), &self.kalman)?;
            track.time_since_update = 0;
            track.hits += 1;
            track.hit_streak += 1;
            track.label = det.label;
            track.last_confidence = det.confidence;
            source[m.track] = Some(batch_index);
        }

        for &d in &assoc.unmatched_detections {
            let (batch_index, det) = detections[d];
            self.tracks.push(Track {
                id: self.next_id,
                label: det.label,
                state: kalman::init_state(&bbox_to_obs(&det.bbox), &self.kalman),
                hits: 1,
                hit_streak: 1,
                age: 0,
                time_since_update: 0,
                last_confidence: det.confidence,
            });
            source.push(Some(batch_index));
            self.next_id += 1;
        }

        let max_age = self.config.max_age;
        let mut retired = Vec::new();
        let mut kept = Vec::with_capacity(self.tracks.len());
        let mut kept_source = Vec::with_capacity(self.tracks.len());
        for (track, src) in self.tracks.drain(..).zip(source) {
            if track.time_since_update > max_age {
                retired.push(track.id);
            } else {
                kept.push(track);
                kept_source.push(src);
            }
        }
        self.tracks = kept;

        let warming_up = self.frames_seen <= u64::from(self.config.min_hits);
        let mut out = Vec::new();
        for (track, src) in self.tracks.iter().zip(kept_source) {
            let (Some(detection), Some(bbox)) = (src, track.bbox()) else {
                continue;
            };
            out.push(TrackOutput {
                channel: self.channel,
                id: track.id,
                label: track.label,
                bbox,
                confidence: track.last_confidence,
                detection,
                confirmed: track.hit_streak >= self.config.min_hits || warming_up,
            });
        }
        out.sort_by_key(|t| t.id);
        retired.sort_unstable();
        Ok((out, retired))
    }
}

/// Face, phone and sleep trackers stepped together.
#[derive(Debug, Clone)]
pub struct TrackerBank {
    channels: [ChannelTracker; 3],
    last_frame: Option<u64>,
}

impl TrackerBank {
    pub fn new(config: TrackerConfig) -> Result<Self, TrackerError> {
        Ok(Self {
            channels: [
                ChannelTracker::new(Channel::Face, config.clone())?,
                ChannelTracker::new(Channel::Phone, config.clone())?,
                ChannelTracker::new(Channel::Sleep, config)?,
            ],
            last_frame: None,
        })
    }

    pub fn channel(&self, channel: Channel) -> &ChannelTracker {
        &self.channels[channel as usize]
    }

    pub fn step(&mut self, frame_index: u64, detections: &[Detection]) -> Result<FrameTracks, TrackerError> {
        if let Some(previous) = self.last_frame {
            if frame_index <= previous {
                return Err(TrackerError::NonMonotoneFrame {
                    previous,
                    got: frame_index,
                });
            }
        }
        if let Some((index, d)) = detections.iter().enumerate().find(|(_, d)| d.frame_index != frame_index) {
            return Err(TrackerError::MixedFrame {
                index,
                got: d.frame_index,
                expected: frame_index,
            });
        }
        self.last_frame = Some(frame_index);

        let mut result = FrameTracks {
            frame_index,
            ..Default::default()
        };
        for tracker in &mut self.channels {
            let channel = tracker.channel();
            let mine: Vec<(usize, &Detection)> = detections
                .iter()
                .enumerate()
                .filter(|(_, d)| d.label.channel() == channel)
                .collect();
            let (updated, retired) = tracker.step(&mine)?;
            result.updated.extend(updated);
            result.retired.extend(retired.into_iter().map(|id| (channel, id)));
        }
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(frame: u64, label: ClassLabel, cx: f64, cy: f64) -> Detection {
        Detection {
            frame_index: frame,
            timestamp: frame as f64 / 10.0,
            label,
            bbox: BoundingBox::from_center(cx, cy, 40.0, 40.0).unwrap(),
            confidence: 0.9,
            embedding: None,
            logits: None,
        }
    }

    fn ids(out: &FrameTracks, channel: Channel) -> Vec<u64> {
        out.confirmed_in(channel).map(|t| t.id).collect()
    }

    #[test]
    fn stationary_object_keeps_one_id() {
        let mut bank = TrackerBank::new(TrackerConfig::default()).unwrap();
        for f in 0..200 {
            let out = bank.step(f, &[det(f, ClassLabel::Face, 100.0, 100.0)]).unwrap();
            assert_eq!(ids(&out, Channel::Face), vec![1], "frame {f}");
        }
    }

    #[test]
    fn empty_frames_retire_everything() {
        let cfg = TrackerConfig::default();
        let mut bank = TrackerBank::new(cfg.clone()).unwrap();
        for f in 0..5 {
            bank.step(f, &[det(f, ClassLabel::Phone, 50.0, 50.0)]).unwrap();
        }
        let mut retired = Vec::new();
        for f in 5..5 + u64::from(cfg.max_age) + 1 {
            let out = bank.step(f, &[]).unwrap();
            assert!(out.updated.is_empty());
            retired.extend(out.retired);
        }
        assert_eq!(retired, vec![(Channel::Phone, 1)]);
        assert!(bank.channel(Channel::Phone).tracks().is_empty());
    }

    #[test]
    fn new_tracks_need_min_hits_after_warmup() {
        let mut bank = TrackerBank::new(TrackerConfig::default()).unwrap();
        for f in 0..10 {
            bank.step(f, &[]).unwrap();
        }
        let a = bank.step(10, &[det(10, ClassLabel::Face, 0.0, 0.0)]).unwrap();
        let b = bank.step(11, &[det(11, ClassLabel::Face, 0.0, 0.0)]).unwrap();
        let c = bank.step(12, &[det(12, ClassLabel::Face, 0.0, 0.0)]).unwrap();
        assert!(ids(&a, Channel::Face).is_empty());
        assert!(ids(&b, Channel::Face).is_empty());
        assert_eq!(ids(&c, Channel::Face), vec![1]);
        assert_eq!(a.updated.len(), 1);
    }

    fn gap_run(gap: u64) -> (u64, u64) {
        let cfg = TrackerConfig::default();
        let mut bank = TrackerBank::new(cfg).unwrap();
        let mut f = 0;
        let mut before = 0;
        for _ in 0..10 {
            let out = bank.step(f, &[det(f, ClassLabel::Face, 200.0, 200.0)]).unwrap();
            before = out.updated[0].id;
            f += 1;
        }
        for _ in 0..gap {
            bank.step(f, &[]).unwrap();
            f += 1;
        }
        let out = bank.step(f, &[det(f, ClassLabel::Face, 200.0, 200.0)]).unwrap();
        (before, out.updated[0].id)
    }

    #[test]
    fn occlusion_boundary() {
        let max_age = u64::from(TrackerConfig::default().max_age);
        let (a, b) = gap_run(max_age);
        assert_eq!(a, b);
        let (a, b) = gap_run(max_age + 1);
        assert_ne!(a, b);
        assert!(b > a);
    }

    #[test]
    fn prediction_bridges_short_gap_in_motion() {
        let mut bank = TrackerBank::new(TrackerConfig::default()).unwrap();
        let pos = |f: u64| 100.0 + 12.0 * f as f64;
        let mut id = 0;
        for f in 0..20 {
            if f == 15 {
                bank.step(f, &[]).unwrap();
                continue;
            }
            let out = bank.step(f, &[det(f, ClassLabel::Face, pos(f), 80.0)]).unwrap();
            let got = out.updated[0].id;
            if f > 0 {
                assert_eq!(got, id, "frame {f}");
            }
            id = got;
        }
    }

    #[test]
    fn channels_are_isolated() {
        let mut bank = TrackerBank::new(TrackerConfig::default()).unwrap();
        let out = bank
            .step(
                0,
                &[
                    det(0, ClassLabel::Face, 10.0, 10.0),
                    det(0, ClassLabel::Phone, 10.0, 10.0),
                    det(0, ClassLabel::SleepAsleep, 10.0, 10.0),
                ],
            )
            .unwrap();
        assert_eq!(out.updated.len(), 3);
        assert!(out.updated.iter().all(|t| t.id == 1));
        let out = bank.step(1, &[det(1, ClassLabel::SleepAwake, 10.0, 10.0)]).unwrap();
        let sleep: Vec<_> = out.updated.iter().filter(|t| t.channel == Channel::Sleep).collect();
        assert_eq!(sleep.len(), 1);
        assert_eq!(sleep[0].id, 1);
        assert_eq!(sleep[0].label, ClassLabel::SleepAwake);
    }

    #[test]
    fn frame_errors() {
        let mut bank = TrackerBank::new(TrackerConfig::default()).unwrap();
        bank.step(5, &[]).unwrap();
        assert!(matches!(bank.step(5, &[]), Err(TrackerError::NonMonotoneFrame { .. })));
        assert!(matches!(
            bank.step(6, &[det(7, ClassLabel::Face, 0.0, 0.0)]),
            Err(TrackerError::MixedFrame { .. })
        ));
        let mut ch = ChannelTracker::new(Channel::Face, TrackerConfig::default()).unwrap();
        let d = det(0, ClassLabel::Phone, 0.0, 0.0);
        assert!(matches!(ch.step(&[(0, &d)]), Err(TrackerError::WrongChannel { .. })));
    }

    #[test]
    fn config_validation() {
        let bad = TrackerConfig { max_age: 0, ..Default::default() };
        assert!(TrackerBank::new(bad).is_err());
        let bad = TrackerConfig { iou_threshold: 1.5, ..Default::default() };
        assert!(TrackerBank::new(bad).is_err());
        let bad = TrackerConfig { min_hits: 0, ..Default::default() };
        assert!(TrackerBank::new(bad).is_err());
    }

    #[test]
    fn track_counters_respect_invariants() {
        let mut bank = TrackerBank::new(TrackerConfig::default()).unwrap();
        for f in 0..60u64 {
            let dets: Vec<Detection> = if f % 7 == 3 {
                vec![]
            } else {
                vec![det(f, ClassLabel::Face, 100.0 + f as f64, 100.0), det(f, ClassLabel::Face, 400.0, 300.0 - f as f64)]
            };
            let out = bank.step(f, &dets).unwrap();
            for t in bank.channel(Channel::Face).tracks() {
                assert!(t.hit_streak <= t.hits && t.hits <= t.age + 1);
                if out.updated.iter().any(|o| o.id == t.id) {
                    assert_eq!(t.time_since_update, 0);
                }
            }
        }
    }
}
