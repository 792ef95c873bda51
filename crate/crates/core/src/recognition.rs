//! Student gallery, per-frame identity matching, per-track identity voting
//! and attendance records.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_math::{cosine_similarity, MathError};

/// Norm deviations up to this are renormalized silently.
pub const NORM_TOLERANCE: f64 = 1e-6;
/// Norm deviations at or beyond this fraction are rejected.
pub const NORM_REJECT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum RecognitionError {
    #[error("gallery: {0}")]
    Gallery(String),
    #[error("embedding dimension {got} does not match gallery dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("embedding norm {0} deviates too far from 1")]
    BadNorm(f64),
    #[error("student `{0}` is not in the gallery")]
    UnknownStudent(String),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("gallery json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("attendance csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Validates an embedding norm and rescales it to unit length.
///
/// Within [`NORM_TOLERANCE`] the vector is returned untouched; below
/// [`NORM_REJECT`] it is renormalized; anything further off is corrupt.
pub fn normalize_embedding(v: &[f64]) -> Result<Vec<f64>, RecognitionError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(MathError::NonFinite.into());
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dev = (norm - 1.0).abs();
    if dev <= NORM_TOLERANCE {
        Ok(v.to_vec())
    } else if dev < NORM_REJECT {
        Ok(v.iter().map(|x| x / norm).collect())
    } else {
        Err(RecognitionError::BadNorm(norm))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub student_id: String,
    pub display_name: String,
    pub embedding: Vec<f64>,
}

/// Registered students. Immutable once loaded.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gallery {
    entries: Vec<GalleryEntry>,
    dimension: usize,
}

impl Gallery {
    pub fn new(entries: Vec<GalleryEntry>) -> Result<Self, RecognitionError> {
        let dimension = entries.first().map_or(0, |e| e.embedding.len());
        let mut seen = BTreeSet::new();
        let mut checked = Vec::with_capacity(entries.len());
        for mut e in entries {
            if !seen.insert(e.student_id.clone()) {
                return Err(RecognitionError::Gallery(format!("duplicate student_id `{}`", e.student_id)));
            }
            if e.embedding.is_empty() || e.embedding.len() != dimension {
                return Err(RecognitionError::Gallery(format!(
                    "student `{}` has embedding dimension {}, expected {dimension}",
                    e.student_id,
                    e.embedding.len()
                )));
            }
            let norm = e.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(RecognitionError::Gallery(format!(
                    "student `{}` embedding has norm {norm}, expected 1",
                    e.student_id
                )));
            }
            e.embedding.shrink_to_fit();
            checked.push(e);
        }
        Ok(Self {
            entries: checked,
            dimension,
        })
    }

    pub fn from_json_reader(r: impl Read) -> Result<Self, RecognitionError> {
        let entries: Vec<GalleryEntry> = serde_json::from_reader(r)?;
        Self::new(entries)
    }

    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, student_id: &str) -> Option<&GalleryEntry> {
        self.entries.iter().find(|e| e.student_id == student_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityMatch {
    pub student_id: String,
    pub similarity: f64,
}

/// Best gallery match for a probe, if it clears `threshold`.
/// Equal similarities resolve to the lexicographically smallest id.
pub fn match_identity(
    probe: &[f64],
    gallery: &Gallery,
    threshold: f64,
) -> Result<Option<IdentityMatch>, RecognitionError> {
    if gallery.is_empty() {
        return Ok(None);
    }
    if probe.len() != gallery.dimension() {
        return Err(RecognitionError::Dimension {
            expected: gallery.dimension(),
            got: probe.len(),
        });
    }
    let mut best: Option<(&str, f64)> = None;
    for e in gallery.entries() {
        let sim = cosine_similarity(probe, &e.embedding)?;
        best = match best {
            Some((id, s)) if s > sim || (s == sim && id < e.student_id.as_str()) => Some((id, s)),
            _ => Some((e.student_id.as_str(), sim)),
        };
    }
    Ok(best
        .filter(|&(_, s)| s >= threshold)
        .map(|(id, s)| IdentityMatch {
            student_id: id.to_string(),
            similarity: s,
        }))
}

/// Votes accumulated by one face track.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityBinding {
    pub track_id: u64,
    pub student_id: Option<String>,
    pub best_similarity: f64,
    pub votes: BTreeMap<String, u32>,
}

impl IdentityBinding {
    pub fn new(track_id: u64) -> Self {
        Self {
            track_id,
            student_id: None,
            best_similarity: -1.0,
            votes: BTreeMap::new(),
        }
    }

    /// Adds one frame's match. `None` casts no vote and keeps the binding.
    pub fn bind(&mut self, frame_match: Option<&IdentityMatch>) {
        let Some(m) = frame_match else { return };
        *self.votes.entry(m.student_id.clone()).or_insert(0) += 1;
        self.best_similarity = self.best_similarity.max(m.similarity);
        // BTreeMap iterates ids in order, so the first maximum is the smallest id.
        let mut leader: Option<(&String, u32)> = None;
        for (id, &n) in &self.votes {
            if leader.is_none_or(|(_, best)| n > best) {
                leader = Some((id, n));
            }
        }
        self.student_id = leader.map(|(id, _)| id.clone());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttendanceStatus {
    Present,
    Absent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttendanceRecord {
    pub student_id: String,
    pub status: AttendanceStatus,
    pub first_seen: Option<f64>,
    pub last_seen: Option<f64>,
}

/// Attendance for every gallery student, in gallery order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttendanceBook {
    records: Vec<AttendanceRecord>,
    names: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl AttendanceBook {
    pub fn new(gallery: &Gallery) -> Self {
        let mut index = BTreeMap::new();
        let mut records = Vec::new();
        let mut names = Vec::new();
        for (i, e) in gallery.entries().iter().enumerate() {
            index.insert(e.student_id.clone(), i);
            names.push(e.display_name.clone());
            records.push(AttendanceRecord {
                student_id: e.student_id.clone(),
                status: AttendanceStatus::Absent,
                first_seen: None,
                last_seen: None,
            });
        }
        Self { records, names, index }
    }

    pub fn records(&self) -> &[AttendanceRecord] {
        &self.records
    }

    pub fn get(&self, student_id: &str) -> Option<&AttendanceRecord> {
        self.index.get(student_id).map(|&i| &self.records[i])
    }

    pub fn is_present(&self, student_id: &str) -> bool {
        self.get(student_id).is_some_and(|r| r.status == AttendanceStatus::Present)
    }

    /// Marks the binding's student present at `timestamp`. An unbound
    /// binding is a no-op.
    pub fn mark(&mut self, binding: &IdentityBinding, timestamp: f64) -> Result<(), RecognitionError> {
        match &binding.student_id {
            Some(id) => self.mark_student(id, timestamp),
            None => Ok(()),
        }
    }

    pub fn mark_student(&mut self, student_id: &str, timestamp: f64) -> Result<(), RecognitionError> {
        let &i = self
            .index
            .get(student_id)
            .ok_or_else(|| RecognitionError::UnknownStudent(student_id.to_string()))?;
        let r = &mut self.records[i];
        r.status = AttendanceStatus::Present;
        r.first_seen.get_or_insert(timestamp);
        r.last_seen = Some(r.last_seen.map_or(timestamp, |t| t.max(timestamp)));
        Ok(())
    }

    /// CSV export with timestamps at millisecond precision; absent students
    /// have empty timestamp fields.
    pub fn write_csv(&self, w: impl Write) -> Result<(), RecognitionError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["student_id", "display_name", "status", "first_seen", "last_seen"])?;
        let ts = |t: Option<f64>| t.map(|v| format!("{v:.3}")).unwrap_or_default();
        for (r, name) in self.records.iter().zip(&self.names) {
            let status = match r.status {
                AttendanceStatus::Present => "present",
                AttendanceStatus::Absent => "absent",
            };
            out.write_record([
                r.student_id.as_str(),
                name.as_str(),
                status,
                &ts(r.first_seen),
                &ts(r.last_seen),
            ])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
