//! Debounced sleep and phone-usage events and the session log.
//!
//! Sleep: each sleep-channel track keeps a trailing window of per-frame
//! asleep flags. An event opens once the window holds at least
//! `asleep_fraction` asleep frames *and* asleep frames span the whole
//! window, and closes when the fraction falls below `asleep_fraction`.
//! The span requirement is what keeps a short nap (say 4 s of a 5 s window,
//! 80 %) from firing.
//!
//! Phone: a confirmed phone track is attributed to the nearest confirmed
//! face. Once the attribution has been stable for `debounce_seconds` an
//! event opens; it closes when the phone track retires.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundingBox, Channel, ClassLabel, Detection};
use crate::model_math::{softmax_probability, MathError};
use crate::recognition::IdentityBinding;
use crate::timefmt;
use crate::tracker::{FrameTracks, TrackOutput};

/// Index of the asleep class in sleep logits `[awake, drowsy, asleep]`.
pub const ASLEEP_LOGIT_INDEX: usize = 2;
pub const SLEEP_LOGIT_COUNT: usize = 3;

const EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("timestamp {got} for track {track_id} precedes previous {previous}")]
    NonMonotoneTimestamp { track_id: u64, previous: f64, got: f64 },
    #[error("event start {start} is after end {end}")]
    InvertedEvent { start: f64, end: f64 },
    #[error("invalid event configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SleepRuleConfig {
    pub window_seconds: f64,
    pub asleep_fraction: f64,
    pub asleep_probability_floor: f64,
}

impl Default for SleepRuleConfig {
    fn default() -> Self {
        Self {
            window_seconds: 5.0,
            asleep_fraction: 0.7,
            asleep_probability_floor: 0.5,
        }
    }
}

impl SleepRuleConfig {
    pub fn validate(&self) -> Result<(), EventError> {
        if !(self.window_seconds > 0.0 && self.window_seconds.is_finite()) {
            return Err(EventError::Config("sleep window must be positive".into()));
        }
        if !(self.asleep_fraction > 0.0 && self.asleep_fraction <= 1.0) {
            return Err(EventError::Config("sleep fraction must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.asleep_probability_floor) {
            return Err(EventError::Config("asleep probability floor must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhoneRuleConfig {
    pub debounce_seconds: f64,
    /// Attribution radius as a multiple of the face box diagonal.
    pub attribution_radius_factor: f64,
}

impl Default for PhoneRuleConfig {
    fn default() -> Self {
        Self {
            debounce_seconds: 2.0,
            attribution_radius_factor: 2.0,
        }
    }
}

impl PhoneRuleConfig {
    pub fn validate(&self) -> Result<(), EventError> {
        if !(self.debounce_seconds >= 0.0 && self.debounce_seconds.is_finite()) {
            return Err(EventError::Config("phone debounce must be non-negative".into()));
        }
        if !(self.attribution_radius_factor >= 0.0 && self.attribution_radius_factor.is_finite()) {
            return Err(EventError::Config("attribution radius factor must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Sleep,
    PhoneUsage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub track_id: u64,
    pub student_id: Option<String>,
    #[serde(serialize_with = "timefmt::ts")]
    pub start_ts: f64,
    #[serde(serialize_with = "timefmt::ts")]
    pub end_ts: f64,
    pub peak_confidence: f64,
}

/// Ordered, append-only event ledger for one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub session_id: String,
    pub start_ts: Option<f64>,
    pub end_ts: Option<f64>,
    pub config: serde_json::Value,
    events: Vec<Event>,
}

impl SessionLog {
    pub fn new(session_id: impl Into<String>, config: serde_json::Value) -> Self {
        Self {
            session_id: session_id.into(),
            start_ts: None,
            end_ts: None,
            config,
            events: Vec::new(),
        }
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

    /// Inserts after every event with an equal or earlier start.
    pub fn append(&mut self, e: Event) -> Result<(), EventError> {
        if e.start_ts.partial_cmp(&e.end_ts).is_none_or(|o| o.is_gt()) {
            return Err(EventError::InvertedEvent {
                start: e.start_ts,
                end: e.end_ts,
            });
        }
        let at = self.events.partition_point(|x| x.start_ts <= e.start_ts);
        self.events.insert(at, e);
        Ok(())
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<(), EventError> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Per-frame sleep evidence for one track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SleepFrame {
    pub asleep: bool,
    /// Asleep probability from logits, else the detection confidence when
    /// the label is asleep, else zero.
    pub score: f64,
}

pub fn classify_sleep_frame(
    label: ClassLabel,
    logits: Option<&[f64]>,
    confidence: f64,
    cfg: &SleepRuleConfig,
) -> Result<SleepFrame, EventError> {
    let prob = logits
        .map(|z| softmax_probability(z, ASLEEP_LOGIT_INDEX))
        .transpose()?;
    let labelled = label == ClassLabel::SleepAsleep;
    let asleep = labelled || prob.is_some_and(|p| p >= cfg.asleep_probability_floor);
    let score = match prob {
        Some(p) => p,
        None if labelled => confidence,
        None => 0.0,
    };
    Ok(SleepFrame { asleep, score })
}

#[derive(Debug, Clone, PartialEq)]
struct OpenEvent {
    start_ts: f64,
    peak: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SleepTransition {
    Opened { track_id: u64, start_ts: f64 },
    Closed(Event),
}

/// Sliding-window sleep state machine for one track.
#[derive(Debug, Clone)]
pub struct SleepMonitor {
    track_id: u64,
    window: VecDeque<(f64, SleepFrame)>,
    last_ts: Option<f64>,
    open: Option<OpenEvent>,
}

impl SleepMonitor {
    pub fn new(track_id: u64) -> Self {
        Self {
            track_id,
            window: VecDeque::new(),
            last_ts: None,
            open: None,
        }
    }

    pub fn is_open(&self) -> bool {
        self.open.is_some()
    }

    pub fn last_ts(&self) -> Option<f64> {
        self.last_ts
    }

    pub fn update_sleep_state(
        &mut self,
        ts: f64,
        frame: SleepFrame,
        cfg: &SleepRuleConfig,
    ) -> Result<Option<SleepTransition>, EventError> {
        if let Some(previous) = self.last_ts {
            if ts < previous {
                return Err(EventError::NonMonotoneTimestamp {
                    track_id: self.track_id,
                    previous,
                    got: ts,
                });
            }
        }
        self.last_ts = Some(ts);
        self.window.push_back((ts, frame));
        let horizon = ts - cfg.window_seconds - EPS;
        while self.window.front().is_some_and(|(t, _)| *t < horizon) {
            self.window.pop_front();
        }

        let asleep: Vec<(f64, f64)> = self
            .window
            .iter()
            .filter(|(_, f)| f.asleep)
            .map(|(t, f)| (*t, f.score))
            .collect();
        let fraction = asleep.len() as f64 / self.window.len() as f64;
        let satisfied = fraction >= cfg.asleep_fraction;

        if let Some(open) = &mut self.open {
            if frame.asleep {
                open.peak = open.peak.max(frame.score);
            }
            if satisfied {
                return Ok(None);
            }
            let open = self.open.take().expect("checked above");
            return Ok(Some(SleepTransition::Closed(Event {
                kind: EventKind::Sleep,
                track_id: self.track_id,
                student_id: None,
                start_ts: open.start_ts,
                end_ts: ts,
                peak_confidence: open.peak,
            })));
        }

        let spans_window = match (asleep.first(), asleep.last()) {
            (Some((first, _)), Some((last, _))) => last - first >= cfg.window_seconds - EPS,
            _ => false,
        };
        if satisfied && spans_window {
            let peak = asleep.iter().map(|(_, s)| *s).fold(0.0, f64::max);
            self.open = Some(OpenEvent { start_ts: ts, peak });
            return Ok(Some(SleepTransition::Opened {
                track_id: self.track_id,
                start_ts: ts,
            }));
        }
        Ok(None)
    }

    /// Closes an open event at the last observed timestamp.
    pub fn flush(&mut self) -> Option<Event> {
        let open = self.open.take()?;
        Some(Event {
            kind: EventKind::Sleep,
            track_id: self.track_id,
            student_id: None,
            start_ts: open.start_ts,
            end_ts: self.last_ts.unwrap_or(open.start_ts),
            peak_confidence: open.peak,
        })
    }
}

/// Nearest face track (by center distance) within the attribution radius.
/// Equal distances go to the lower track id.
pub fn attribute_to_face<'a>(
    bbox: &BoundingBox,
    faces: impl IntoIterator<Item = &'a TrackOutput>,
    radius_factor: f64,
) -> Option<u64> {
    let (px, py) = bbox.center();
    let mut best: Option<(f64, u64)> = None;
    for f in faces {
        let (fx, fy) = f.bbox.center();
        let d = (px - fx).hypot(py - fy);
        if d > radius_factor * f.bbox.diagonal() {
            continue;
        }
        if best.is_none_or(|(bd, bid)| d < bd || (d == bd && f.id < bid)) {
            best = Some((d, f.id));
        }
    }
    best.map(|(_, id)| id)
}

#[derive(Debug, Clone, PartialEq)]
struct PhoneState {
    face: Option<u64>,
    since_ts: f64,
    last_ts: f64,
    peak: f64,
    open: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhoneTransition {
    Opened { track_id: u64, face: Option<u64>, start_ts: f64 },
}

/// Debounce state for every live phone track.
#[derive(Debug, Clone, Default)]
pub struct PhoneMonitor {
    phones: BTreeMap<u64, PhoneState>,
}

fn student_of(bindings: &BTreeMap<u64, IdentityBinding>, face: Option<u64>) -> Option<String> {
    face.and_then(|f| bindings.get(&f)).and_then(|b| b.student_id.clone())
}

impl PhoneMonitor {
    pub fn detect_phone_usage<'a>(
        &mut self,
        phones: impl IntoIterator<Item = &'a TrackOutput>,
        faces: &[&TrackOutput],
        live_faces: &BTreeSet<u64>,
        ts: f64,
        cfg: &PhoneRuleConfig,
    ) -> Vec<PhoneTransition> {
        let mut out = Vec::new();
        for p in phones {
            let seen = attribute_to_face(&p.bbox, faces.iter().copied(), cfg.attribution_radius_factor);
            let st = self.phones.entry(p.id).or_insert(PhoneState {
                face: seen,
                since_ts: ts,
                last_ts: ts,
                peak: p.confidence,
                open: false,
            });
            // a face missing from this frame but still tracked keeps its phone
            let face = match seen {
                None if st.face.is_some_and(|f| live_faces.contains(&f)) => st.face,
                other => other,
            };
            if !st.open && st.face != face {
                st.face = face;
                st.since_ts = ts;
                st.peak = p.confidence;
            }
            st.last_ts = ts;
            st.peak = st.peak.max(p.confidence);
            if !st.open && ts - st.since_ts >= cfg.debounce_seconds - EPS {
                st.open = true;
                out.push(PhoneTransition::Opened {
                    track_id: p.id,
                    face: st.face,
                    start_ts: st.since_ts,
                });
            }
        }
        out
    }

    /// Ends tracking of a phone; returns its event if one was open.
    pub fn retire(&mut self, phone_id: u64, bindings: &BTreeMap<u64, IdentityBinding>) -> Option<Event> {
        let st = self.phones.remove(&phone_id)?;
        st.open.then(|| Event {
            kind: EventKind::PhoneUsage,
            track_id: phone_id,
            student_id: student_of(bindings, st.face),
            start_ts: st.since_ts,
            end_ts: st.last_ts,
            peak_confidence: st.peak,
        })
    }

    pub fn open_faces(&self) -> impl Iterator<Item = Option<u64>> + '_ {
        self.phones.values().filter(|s| s.open).map(|s| s.face)
    }

    pub fn open_count(&self) -> usize {
        self.phones.values().filter(|s| s.open).count()
    }

    pub fn live_ids(&self) -> Vec<u64> {
        self.phones.keys().copied().collect()
    }
}

/// Sleep and phone rules plus the session log, fed one frame at a time.
#[derive(Debug, Clone)]
pub struct EventEngine {
    sleep_cfg: SleepRuleConfig,
    phone_cfg: PhoneRuleConfig,
    sleep: BTreeMap<u64, SleepMonitor>,
    sleep_faces: BTreeMap<u64, u64>,
    phones: PhoneMonitor,
    live_faces: BTreeSet<u64>,
    log: SessionLog,
}

impl EventEngine {
    pub fn new(sleep_cfg: SleepRuleConfig, phone_cfg: PhoneRuleConfig, log: SessionLog) -> Result<Self, EventError> {
        sleep_cfg.validate()?;
        phone_cfg.validate()?;
        Ok(Self {
            sleep_cfg,
            phone_cfg,
            sleep: BTreeMap::new(),
            sleep_faces: BTreeMap::new(),
            phones: PhoneMonitor::default(),
            live_faces: BTreeSet::new(),
            log,
        })
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn open_event_count(&self) -> usize {
        self.sleep.values().filter(|m| m.is_open()).count() + self.phones.open_count()
    }

    /// Students with an open sleep event on an attributed sleep track.
    pub fn sleeping_students(&self, bindings: &BTreeMap<u64, IdentityBinding>) -> Vec<String> {
        let mut out: Vec<String> = self
            .sleep
            .iter()
            .filter(|(_, m)| m.is_open())
            .filter_map(|(id, _)| student_of(bindings, self.sleep_faces.get(id).copied()))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn phone_students(&self, bindings: &BTreeMap<u64, IdentityBinding>) -> Vec<String> {
        let mut out: Vec<String> = self.phones.open_faces().filter_map(|f| student_of(bindings, f)).collect();
        out.sort();
        out.dedup();
        out
    }

    fn close_sleep(&mut self, mut e: Event, bindings: &BTreeMap<u64, IdentityBinding>) -> Result<(), EventError> {
        e.student_id = student_of(bindings, self.sleep_faces.get(&e.track_id).copied());
        self.log.append(e)
    }

    /// Feeds one frame of tracker output. `detections` is the batch the
    /// outputs index into.
    pub fn process_frame(
        &mut self,
        ts: f64,
        tracks: &FrameTracks,
        detections: &[Detection],
        bindings: &BTreeMap<u64, IdentityBinding>,
    ) -> Result<(), EventError> {
        self.log.start_ts.get_or_insert(ts);
        self.log.end_ts = Some(ts);
        let faces: Vec<&TrackOutput> = tracks.confirmed_in(Channel::Face).collect();

        for out in tracks.updated.iter().filter(|t| t.channel == Channel::Sleep) {
            let det = &detections[out.detection];
            let frame = classify_sleep_frame(det.label, det.logits.as_deref(), det.confidence, &self.sleep_cfg)?;
            if let Some(face) = attribute_to_face(&out.bbox, faces.iter().copied(), self.phone_cfg.attribution_radius_factor) {
                self.sleep_faces.insert(out.id, face);
            }
            let monitor = self.sleep.entry(out.id).or_insert_with(|| SleepMonitor::new(out.id));
            if let Some(SleepTransition::Closed(e)) = monitor.update_sleep_state(ts, frame, &self.sleep_cfg)? {
                self.close_sleep(e, bindings)?;
            }
        }

        for &(channel, id) in &tracks.retired {
            if channel == Channel::Face {
                self.live_faces.remove(&id);
            }
        }
        self.live_faces
            .extend(tracks.updated.iter().filter(|t| t.channel == Channel::Face).map(|t| t.id));
        self.phones.detect_phone_usage(
            tracks.confirmed_in(Channel::Phone),
            &faces,
            &self.live_faces,
            ts,
            &self.phone_cfg,
        );

        for &(channel, id) in &tracks.retired {
            match channel {
                Channel::Sleep => {
                    if let Some(mut m) = self.sleep.remove(&id) {
                        if let Some(e) = m.flush() {
                            self.close_sleep(e, bindings)?;
                        }
                    }
                    self.sleep_faces.remove(&id);
                }
                Channel::Phone => {
                    if let Some(e) = self.phones.retire(id, bindings) {
                        self.log.append(e)?;
                    }
                }
                Channel::Face => {}
            }
        }
        Ok(())
    }

    /// Closes every open event and returns the finished log.
    pub fn finish(mut self, bindings: &BTreeMap<u64, IdentityBinding>) -> Result<SessionLog, EventError> {
        let ids: Vec<u64> = self.sleep.keys().copied().collect();
        for id in ids {
            if let Some(e) = self.sleep.get_mut(&id).and_then(SleepMonitor::flush) {
                self.close_sleep(e, bindings)?;
            }
        }
        for id in self.phones.live_ids() {
            if let Some(e) = self.phones.retire(id, bindings) {
                self.log.append(e)?;
            }
        }
        Ok(self.log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(asleep: bool) -> SleepFrame {
        SleepFrame {
            asleep,
            score: if asleep { 0.9 } else { 0.0 },
        }
    }

    /// 10 fps replay; returns (opened start times, closed events).
    fn replay(flags: impl IntoIterator<Item = bool>) -> (Vec<f64>, Vec<Event>) {
        let cfg = SleepRuleConfig::default();
        let mut m = SleepMonitor::new(1);
        let (mut opened, mut closed) = (Vec::new(), Vec::new());
        for (i, a) in flags.into_iter().enumerate() {
            match m.update_sleep_state(i as f64 / 10.0, frame(a), &cfg).unwrap() {
                Some(SleepTransition::Opened { start_ts, .. }) => opened.push(start_ts),
                Some(SleepTransition::Closed(e)) => closed.push(e),
                None => {}
            }
        }
        closed.extend(m.flush());
        (opened, closed)
    }

    #[test]
    fn six_seconds_asleep_fires_once_at_window() {
        let flags = (0..60).map(|_| true).chain((0..100).map(|_| false));
        let (opened, closed) = replay(flags);
        assert_eq!(opened.len(), 1);
        assert!((opened[0] - 5.0).abs() <= 0.1 + 1e-9);
        assert_eq!(closed.len(), 1);
        assert!(closed[0].end_ts > 6.0);
    }

    #[test]
    fn four_seconds_asleep_never_fires() {
        let flags = (0..40).map(|_| true).chain((0..100).map(|_| false));
        assert_eq!(replay(flags), (vec![], vec![]));
        let flags = (0..50).map(|_| false).chain((0..40).map(|_| true)).chain((0..100).map(|_| false));
        assert_eq!(replay(flags), (vec![], vec![]));
    }

    #[test]
    fn alternating_never_fires() {
        let (opened, _) = replay((0..1000).map(|i| i % 2 == 0));
        assert!(opened.is_empty());
    }

    #[test]
    fn rejects_time_going_backwards() {
        let cfg = SleepRuleConfig::default();
        let mut m = SleepMonitor::new(3);
        m.update_sleep_state(1.0, frame(true), &cfg).unwrap();
        assert!(matches!(
            m.update_sleep_state(0.5, frame(true), &cfg),
            Err(EventError::NonMonotoneTimestamp { .. })
        ));
    }

    #[test]
    fn classification_rules() {
        let cfg = SleepRuleConfig::default();
        let f = classify_sleep_frame(ClassLabel::SleepAsleep, None, 0.8, &cfg).unwrap();
        assert_eq!(f, SleepFrame { asleep: true, score: 0.8 });
        let f = classify_sleep_frame(ClassLabel::SleepAwake, Some(&[0.0, 0.0, 3.0]), 0.8, &cfg).unwrap();
        assert!(f.asleep && f.score > 0.5);
        let f = classify_sleep_frame(ClassLabel::SleepDrowsy, Some(&[2.0, 2.0, 0.0]), 0.8, &cfg).unwrap();
        assert!(!f.asleep);
        assert!(classify_sleep_frame(ClassLabel::SleepDrowsy, Some(&[1.0]), 0.8, &cfg).is_err());
    }

    fn ev(start: f64, end: f64) -> Event {
        Event {
            kind: EventKind::Sleep,
            track_id: 1,
            student_id: None,
            start_ts: start,
            end_ts: end,
            peak_confidence: 0.5,
        }
    }

    #[test]
    fn log_orders_by_start() {
        let mut log = SessionLog::new("s", serde_json::Value::Null);
        log.append(ev(5.0, 6.0)).unwrap();
        assert_eq!(log.len(), 1);
        log.append(ev(1.0, 9.0)).unwrap();
        let starts: Vec<f64> = log.events().iter().map(|e| e.start_ts).collect();
        assert_eq!(starts, vec![1.0, 5.0]);
        assert!(matches!(log.append(ev(3.0, 2.0)), Err(EventError::InvertedEvent { .. })));
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"kind":"sleep","track_id":1,"student_id":null,"start_ts":1.000,"end_ts":9.000,"peak_confidence":0.5}"#
        );
        let back: Event = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(back, ev(1.0, 9.0));
    }

    fn out(channel: Channel, id: u64, cx: f64, cy: f64, size: f64) -> TrackOutput {
        TrackOutput {
            channel,
            id,
            label: match channel {
                Channel::Face => ClassLabel::Face,
                Channel::Phone => ClassLabel::Phone,
                Channel::Sleep => ClassLabel::SleepAsleep,
            },
            bbox: BoundingBox::from_center(cx, cy, size, size).unwrap(),
            confidence: 0.8,
            detection: 0,
            confirmed: true,
        }
    }

    #[test]
    fn attribution_picks_nearest_in_radius() {
        let f1 = out(Channel::Face, 1, 100.0, 100.0, 40.0);
        let f2 = out(Channel::Face, 2, 300.0, 100.0, 40.0);
        let phone = out(Channel::Phone, 1, 150.0, 120.0, 20.0);
        assert_eq!(attribute_to_face(&phone.bbox, [&f1, &f2], 2.0), Some(1));
        let far = out(Channel::Phone, 2, 700.0, 700.0, 20.0);
        assert_eq!(attribute_to_face(&far.bbox, [&f1, &f2], 2.0), None);
        let mid = out(Channel::Phone, 3, 200.0, 100.0, 20.0);
        assert_eq!(attribute_to_face(&mid.bbox, [&f2, &f1], 5.0), Some(1));
    }

    /// 10 fps; `face_seen(i)` says whether face 1 is in frame i, `alive`
    /// whether its track survives the gaps.
    fn phone_run_with(seconds: f64, face_seen: impl Fn(usize) -> bool, alive: bool) -> Vec<Event> {
        let cfg = PhoneRuleConfig::default();
        let mut mon = PhoneMonitor::default();
        let mut bindings = BTreeMap::new();
        let mut b = IdentityBinding::new(1);
        b.student_id = Some("s1".into());
        bindings.insert(1, b);
        let f = out(Channel::Face, 1, 100.0, 100.0, 40.0);
        let p = out(Channel::Phone, 4, 130.0, 140.0, 20.0);
        let live: BTreeSet<u64> = if alive { [1].into() } else { BTreeSet::new() };
        let n = (seconds * 10.0).round() as usize;
        for i in 0..=n {
            let faces: Vec<&TrackOutput> = if face_seen(i) { vec![&f] } else { vec![] };
            mon.detect_phone_usage([&p], &faces, &live, i as f64 / 10.0, &cfg);
        }
        mon.retire(4, &bindings).into_iter().collect()
    }

    fn phone_run(seconds: f64, face: bool) -> Vec<Event> {
        phone_run_with(seconds, |_| face, face)
    }

    #[test]
    fn flickering_face_keeps_its_phone() {
        let events = phone_run_with(3.0, |i| i % 5 != 3, true);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].student_id.as_deref(), Some("s1"));
        assert_eq!(events[0].start_ts, 0.0);
        // once the face track is gone, a gap restarts the debounce
        assert!(phone_run_with(3.0, |i| i % 5 != 3, false).is_empty());
    }

    #[test]
    fn phone_debounce() {
        let events = phone_run(3.0, true);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].student_id.as_deref(), Some("s1"));
        assert_eq!(events[0].kind, EventKind::PhoneUsage);
        assert!(events[0].end_ts - events[0].start_ts >= 2.0);
        assert!(phone_run(1.0, true).is_empty());
        let events = phone_run(3.0, false);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].student_id, None);
    }

    #[test]
    fn config_validation() {
        assert!(SleepRuleConfig { window_seconds: 0.0, ..Default::default() }.validate().is_err());
        assert!(SleepRuleConfig { asleep_fraction: 1.5, ..Default::default() }.validate().is_err());
        assert!(PhoneRuleConfig { debounce_seconds: -1.0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn sleep_events_never_overlap_or_fire_early(
            runs in prop::collection::vec((any::<bool>(), 1usize..80), 1..20),
        ) {
            let cfg = SleepRuleConfig::default();
            let mut m = SleepMonitor::new(1);
            let mut flags = Vec::new();
            for (a, n) in runs { flags.extend(std::iter::repeat_n(a, n)); }
            let mut events = Vec::new();
            for (i, &a) in flags.iter().enumerate() {
                let ts = i as f64 / 10.0;
                match m.update_sleep_state(ts, frame(a), &cfg).unwrap() {
                    Some(SleepTransition::Opened { start_ts, .. }) => {
                        prop_assert!(m.is_open());
                        // earliest asleep frame still in the window
                        let first = flags.iter().enumerate()
                            .filter(|&(j, &b)| b && j as f64 / 10.0 >= ts - cfg.window_seconds - 1e-9 && j <= i)
                            .map(|(j, _)| j as f64 / 10.0)
                            .next().unwrap();
                        prop_assert!(start_ts - first >= cfg.window_seconds - 1e-9);
                    }
                    Some(SleepTransition::Closed(e)) => events.push(e),
                    None => {}
                }
            }
            events.extend(m.flush());
            for w in events.windows(2) {
                prop_assert!(w[0].end_ts <= w[1].start_ts);
            }
            for e in &events { prop_assert!(e.start_ts <= e.end_ts); }
        }
    }
}
