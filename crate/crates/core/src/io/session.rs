//! The session pipeline: frame batches through the tracker bank, face
//! recognition and the event engine, into track, event and attendance
//! outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::events::{EventEngine, EventError, EventKind, PhoneRuleConfig, SessionLog, SleepRuleConfig};
use crate::geometry::Channel;
use crate::io::records::{write_jsonl, TrackLogRecord};
use crate::io::status::{StatusDocument, StudentStatus};
use crate::io::stream::FrameBatch;
use crate::recognition::{match_identity, AttendanceBook, AttendanceStatus, Gallery, IdentityBinding, RecognitionError};
use crate::tracker::{TrackerBank, TrackerConfig, TrackerError};

pub const TRACKS_FILE: &str = "tracks.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const ATTENDANCE_FILE: &str = "attendance.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("frame {frame}: {source}")]
    Tracker { frame: u64, source: TrackerError },
    #[error("frame {frame}: {source}")]
    Recognition { frame: u64, source: RecognitionError },
    #[error("frame {frame}: {source}")]
    Event { frame: u64, source: EventError },
    #[error("writing outputs: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub tracker: TrackerConfig,
    pub sim_threshold: f64,
    pub sleep: SleepRuleConfig,
    pub phone: PhoneRuleConfig,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            tracker: TrackerConfig::default(),
            sim_threshold: 0.7,
            sleep: SleepRuleConfig::default(),
            phone: PhoneRuleConfig::default(),
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        self.tracker.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        self.sleep.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        self.phone.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        if !(-1.0..=1.0).contains(&self.sim_threshold) {
            return Err(SessionError::Config(format!(
                "similarity threshold must be in [-1, 1], got {}",
                self.sim_threshold
            )));
        }
        Ok(())
    }

    pub fn session_id(&self) -> String {
        format!("session-{:016x}", self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub frames: u64,
    pub start_ts: Option<f64>,
    pub end_ts: Option<f64>,
    pub track_records: usize,
    pub sleep_events: usize,
    pub phone_events: usize,
    pub present: usize,
    pub absent: usize,
    pub skipped_records: usize,
    pub config: SessionConfig,
}

#[derive(Debug, Clone)]
pub struct SessionOutputs {
    pub tracks: Vec<TrackLogRecord>,
    pub log: SessionLog,
    pub attendance: AttendanceBook,
    pub summary: SessionSummary,
}

impl SessionOutputs {
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &self.tracks)?;
        fs::write(dir.join(TRACKS_FILE), &buf)?;

        let mut buf = Vec::new();
        self.log.write_jsonl(&mut buf).map_err(std::io::Error::other)?;
        fs::write(dir.join(EVENTS_FILE), &buf)?;

        let mut buf = Vec::new();
        self.attendance.write_csv(&mut buf).map_err(std::io::Error::other)?;
        fs::write(dir.join(ATTENDANCE_FILE), &buf)?;

        let mut summary = serde_json::to_vec_pretty(&self.summary)?;
        summary.push(b'\n');
        fs::write(dir.join(SUMMARY_FILE), summary)
    }
}

pub struct Session<'g> {
    config: SessionConfig,
    gallery: &'g Gallery,
    bank: TrackerBank,
    bindings: BTreeMap<u64, IdentityBinding>,
    attendance: AttendanceBook,
    engine: EventEngine,
    tracks: Vec<TrackLogRecord>,
    frames: u64,
    last_ts: f64,
}

impl<'g> Session<'g> {
    pub fn new(config: SessionConfig, gallery: &'g Gallery) -> Result<Self, SessionError> {
        config.validate()?;
        let snapshot = serde_json::to_value(&config).expect("config serializes");
        let log = SessionLog::new(config.session_id(), snapshot);
        let engine = EventEngine::new(config.sleep, config.phone, log).map_err(|e| SessionError::Config(e.to_string()))?;
        Ok(Self {
            bank: TrackerBank::new(config.tracker.clone()).map_err(|e| SessionError::Config(e.to_string()))?,
            attendance: AttendanceBook::new(gallery),
            bindings: BTreeMap::new(),
            engine,
            tracks: Vec::new(),
            frames: 0,
            last_ts: 0.0,
            config,
            gallery,
        })
    }

    pub fn attendance(&self) -> &AttendanceBook {
        &self.attendance
    }

    pub fn bindings(&self) -> &BTreeMap<u64, IdentityBinding> {
        &self.bindings
    }

    pub fn process(&mut self, batch: &FrameBatch) -> Result<(), SessionError> {
        let frame = batch.frame_index;
        let ts = batch.timestamp;
        let out = self
            .bank
            .step(frame, &batch.detections)
            .map_err(|source| SessionError::Tracker { frame, source })?;

        let mut seen: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        for t in out.updated.iter().filter(|t| t.channel == Channel::Face) {
            let det = &batch.detections[t.detection];
            let binding = self.bindings.entry(t.id).or_insert_with(|| IdentityBinding::new(t.id));
            if let Some(probe) = &det.embedding {
                let m = match_identity(probe, self.gallery, self.config.sim_threshold)
                    .map_err(|source| SessionError::Recognition { frame, source })?;
                binding.bind(m.as_ref());
            }
            if let Some(student) = &binding.student_id {
                seen.entry(student.clone()).or_default().push(t.id);
                self.attendance
                    .mark(binding, ts)
                    .map_err(|source| SessionError::Recognition { frame, source })?;
            }
        }
        for (student, ids) in &seen {
            if ids.len() > 1 {
                warn!(frame, student = %student, tracks = ?ids, "student bound to several face tracks");
            }
        }

        for t in out.confirmed() {
            let student_id = match t.channel {
                Channel::Face => self.bindings.get(&t.id).and_then(|b| b.student_id.clone()),
                _ => None,
            };
            self.tracks.push(TrackLogRecord {
                frame,
                ts,
                channel: t.channel,
                track_id: t.id,
                bbox: t.bbox.to_array(),
                student_id,
            });
        }

        self.engine
            .process_frame(ts, &out, &batch.detections, &self.bindings)
            .map_err(|source| SessionError::Event { frame, source })?;
        self.frames += 1;
        self.last_ts = ts;
        Ok(())
    }

    pub fn status(&self) -> StatusDocument {
        let sleeping = self.engine.sleeping_students(&self.bindings);
        let phones = self.engine.phone_students(&self.bindings);
        let students = self
            .gallery
            .entries()
            .iter()
            .map(|e| {
                let id = &e.student_id;
                (
                    id.clone(),
                    StudentStatus {
                        present: self.attendance.is_present(id),
                        sleeping_now: sleeping.contains(id),
                        phone_now: phones.contains(id),
                    },
                )
            })
            .collect();
        StatusDocument {
            session_id: self.config.session_id(),
            ts: self.last_ts,
            students,
            open_event_count: self.engine.open_event_count(),
        }
    }

    pub fn finish(self, skipped_records: usize) -> Result<SessionOutputs, SessionError> {
        let frame = self.frames;
        let log = self
            .engine
            .finish(&self.bindings)
            .map_err(|source| SessionError::Event { frame, source })?;
        let count = |k: EventKind| log.events().iter().filter(|e| e.kind == k).count();
        let present = self
            .attendance
            .records()
            .iter()
            .filter(|r| r.status == AttendanceStatus::Present)
            .count();
        let summary = SessionSummary {
            session_id: self.config.session_id(),
            frames: self.frames,
            start_ts: log.start_ts,
            end_ts: log.end_ts,
            track_records: self.tracks.len(),
            sleep_events: count(EventKind::Sleep),
            phone_events: count(EventKind::PhoneUsage),
            present,
            absent: self.attendance.records().len() - present,
            skipped_records,
            config: self.config,
        };
        Ok(SessionOutputs {
            tracks: self.tracks,
            log,
            attendance: self.attendance,
            summary,
        })
    }
}

/// Runs a whole in-memory stream.
pub fn run_frames<'a>(
    config: SessionConfig,
    gallery: &Gallery,
    frames: impl IntoIterator<Item = &'a FrameBatch>,
) -> Result<SessionOutputs, SessionError> {
    let mut session = Session::new(config, gallery)?;
    for batch in frames {
        session.process(batch)?;
    }
    session.finish(0)
}
