//! Detection stream parsing: JSON Lines in, validated per-frame batches out.

use std::io::BufRead;

use thiserror::Error;
use tracing::warn;

use crate::events::SLEEP_LOGIT_COUNT;
use crate::geometry::{BoundingBox, ClassLabel, Detection};
use crate::io::records::StreamRecord;
use crate::recognition::normalize_embedding;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecordError {
    #[error("read failed: {0}")]
    Io(String),
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("invalid bbox: {0}")]
    BadBox(String),
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("invalid embedding: {0}")]
    Embedding(String),
    #[error("invalid logits: {0}")]
    Logits(String),
    #[error("timestamp {0} must be finite and non-negative")]
    Timestamp(f64),
    #[error("frame index {got} is lower than preceding frame {previous}")]
    FrameOrder { previous: u64, got: u64 },
    #[error("timestamp {got} is earlier than preceding frame's {previous}")]
    TimestampOrder { previous: f64, got: f64 },
    #[error("timestamp {got} differs from {expected} already given for frame {frame}")]
    FrameTimestamp { frame: u64, expected: f64, got: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {kind}")]
pub struct StreamError {
    pub line: usize,
    pub kind: RecordError,
}

/// All detections that share one frame index.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBatch {
    pub frame_index: u64,
    pub timestamp: f64,
    pub detections: Vec<Detection>,
}

/// Validates a single record on its own (ordering is checked by the reader).
pub fn record_to_detection(rec: &StreamRecord) -> Result<Detection, RecordError> {
    let label: ClassLabel = rec
        .label
        .parse()
        .map_err(|_| RecordError::UnknownLabel(rec.label.clone()))?;
    if !rec.ts.is_finite() || rec.ts < 0.0 {
        return Err(RecordError::Timestamp(rec.ts));
    }
    let [x1, y1, x2, y2] = rec.bbox;
    let bbox = BoundingBox::new(x1, y1, x2, y2).map_err(|e| RecordError::BadBox(e.to_string()))?;
    if !(0.0..=1.0).contains(&rec.conf) {
        return Err(RecordError::Confidence(rec.conf));
    }
    let embedding = match &rec.embedding {
        None => None,
        Some(_) if label != ClassLabel::Face => {
            return Err(RecordError::Embedding(format!("embedding on a `{label}` record")));
        }
        Some(v) => Some(normalize_embedding(v).map_err(|e| RecordError::Embedding(e.to_string()))?),
    };
    let logits = match &rec.logits {
        None => None,
        Some(_) if !label.is_sleep() => {
            return Err(RecordError::Logits(format!("logits on a `{label}` record")));
        }
        Some(z) if z.len() != SLEEP_LOGIT_COUNT => {
            return Err(RecordError::Logits(format!(
                "expected {SLEEP_LOGIT_COUNT} values [awake, drowsy, asleep], got {}",
                z.len()
            )));
        }
        Some(z) if z.iter().any(|v| !v.is_finite()) => {
            return Err(RecordError::Logits("non-finite value".into()));
        }
        Some(z) => Some(z.clone()),
    };
    Ok(Detection {
        frame_index: rec.frame,
        timestamp: rec.ts,
        label,
        bbox,
        confidence: rec.conf,
        embedding,
        logits,
    })
}

/// Lazily groups a line stream into frame batches.
///
/// With `skip_bad` set, invalid lines are logged, counted and dropped
/// instead of ending the stream.
pub struct StreamReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    skip_bad: bool,
    skipped: usize,
    pending: Option<FrameBatch>,
    last_frame: Option<u64>,
    last_ts: Option<f64>,
    done: bool,
}

impl<R: BufRead> StreamReader<R> {
    pub fn new(reader: R, skip_bad: bool) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            skip_bad,
            skipped: 0,
            pending: None,
            last_frame: None,
            last_ts: None,
            done: false,
        }
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    fn accept(&mut self, det: Detection) -> Result<Option<FrameBatch>, RecordError> {
        if let Some(batch) = &mut self.pending {
            if det.frame_index == batch.frame_index {
                if det.timestamp != batch.timestamp {
                    return Err(RecordError::FrameTimestamp {
                        frame: batch.frame_index,
                        expected: batch.timestamp,
                        got: det.timestamp,
                    });
                }
                batch.detections.push(det);
                return Ok(None);
            }
        }
        if let Some(previous) = self.last_frame {
            if det.frame_index < previous {
                return Err(RecordError::FrameOrder {
                    previous,
                    got: det.frame_index,
                });
            }
        }
        if let Some(previous) = self.last_ts {
            if det.timestamp < previous {
                return Err(RecordError::TimestampOrder {
                    previous,
                    got: det.timestamp,
                });
            }
        }
        self.last_frame = Some(det.frame_index);
        self.last_ts = Some(det.timestamp);
        let fresh = FrameBatch {
            frame_index: det.frame_index,
            timestamp: det.timestamp,
            detections: vec![det],
        };
        Ok(self.pending.replace(fresh))
    }

    fn parse_line(&mut self, line: &str) -> Result<Option<FrameBatch>, RecordError> {
        let rec: StreamRecord = serde_json::from_str(line).map_err(|e| RecordError::Json(e.to_string()))?;
        let det = record_to_detection(&rec)?;
        self.accept(det)
    }
}

impl<R: BufRead> Iterator for StreamReader<R> {
    type Item = Result<FrameBatch, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            let Some(line) = self.lines.next() else {
                self.done = true;
                break;
            };
            self.line_no += 1;
            let result = match line {
                Ok(l) if l.trim().is_empty() => continue,
                Ok(l) => self.parse_line(&l),
                Err(e) => Err(RecordError::Io(e.to_string())),
            };
            match result {
                Ok(Some(batch)) => return Some(Ok(batch)),
                Ok(None) => {}
                Err(kind @ RecordError::Io(_)) => {
                    self.done = true;
                    return Some(Err(StreamError { line: self.line_no, kind }));
                }
                Err(kind) if self.skip_bad => {
                    warn!(line = self.line_no, "skipping bad record: {kind}");
                    self.skipped += 1;
                }
                Err(kind) => {
                    self.done = true;
                    return Some(Err(StreamError { line: self.line_no, kind }));
                }
            }
        }
        self.pending.take().map(Ok)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedStream {
    pub frames: Vec<FrameBatch>,
    pub skipped: usize,
}

/// Reads a whole stream into memory.
pub fn parse_stream(source: impl BufRead, skip_bad: bool) -> Result<ParsedStream, StreamError> {
    let mut reader = StreamReader::new(source, skip_bad);
    let frames = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok(ParsedStream {
        frames,
        skipped: reader.skipped(),
    })
}
