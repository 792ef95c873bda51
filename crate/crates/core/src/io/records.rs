//! On-disk record shapes. Every file is JSON Lines.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::geometry::Channel;
use crate::timefmt;

/// One detection as it appears in a detection stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamRecord {
    pub frame: u64,
    #[serde(serialize_with = "timefmt::ts")]
    pub ts: f64,
    pub label: String,
    #[serde(serialize_with = "timefmt::bbox")]
    pub bbox: [f64; 4],
    pub conf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
}

/// Ground-truth object placement for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub frame: u64,
    #[serde(serialize_with = "timefmt::ts")]
    pub ts: f64,
    pub object_id: u64,
    pub label: String,
    #[serde(serialize_with = "timefmt::bbox")]
    pub bbox: [f64; 4],
    #[serde(default)]
    pub identity: Option<String>,
}

impl TruthRecord {
    pub fn channel(&self) -> Option<Channel> {
        self.label.parse::<crate::ClassLabel>().ok().map(|l| l.channel())
    }
}

/// One confirmed track in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackLogRecord {
    pub frame: u64,
    #[serde(serialize_with = "timefmt::ts")]
    pub ts: f64,
    pub channel: Channel,
    pub track_id: u64,
    #[serde(serialize_with = "timefmt::bbox")]
    pub bbox: [f64; 4],
    pub student_id: Option<String>,
}

pub fn write_jsonl<T: Serialize>(mut w: impl Write, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl_bytes<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, items).expect("writing to a Vec cannot fail");
    buf
}

/// Reads a JSON Lines file, skipping blank lines. Errors carry the 1-based
/// line number.
pub fn read_jsonl<T: DeserializeOwned>(r: impl BufRead) -> Result<Vec<T>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| (i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| (i + 1, e.to_string()))?);
    }
    Ok(out)
}
