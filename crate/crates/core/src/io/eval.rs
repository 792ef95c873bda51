//! Track-log scoring against ground truth: id switches, purity, misses.
//!
//! Each frame, emitted tracks and ground-truth objects of the same channel
//! are paired greedily by descending IoU (at or above the threshold).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BoundingBox, Channel};
use crate::io::records::{TrackLogRecord, TruthRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    /// Frames at the start of the ground truth to leave out of scoring.
    pub warmup_frames: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            warmup_frames: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub id_switches: u64,
    pub track_purity: f64,
    pub miss_rate: f64,
    pub false_track_count: u64,
    pub truth_instances: u64,
    pub matched_instances: u64,
    pub tracks: u64,
}

type TrackKey = (Channel, u64);

pub fn evaluate(tracks: &[TrackLogRecord], truth: &[TruthRecord], opts: &EvalOptions) -> EvalReport {
    let first = truth.iter().map(|t| t.frame).min().unwrap_or(0);
    let cutoff = first + opts.warmup_frames;

    let mut truth_by_frame: BTreeMap<u64, Vec<&TruthRecord>> = BTreeMap::new();
    for t in truth.iter().filter(|t| t.frame >= cutoff) {
        truth_by_frame.entry(t.frame).or_default().push(t);
    }
    let mut tracks_by_frame: BTreeMap<u64, Vec<&TrackLogRecord>> = BTreeMap::new();
    for t in tracks.iter().filter(|t| t.frame >= cutoff) {
        tracks_by_frame.entry(t.frame).or_default().push(t);
    }
    let frames: BTreeSet<u64> = truth_by_frame.keys().chain(tracks_by_frame.keys()).copied().collect();

    let mut last_id: BTreeMap<u64, TrackKey> = BTreeMap::new();
    let mut id_switches = 0u64;
    let mut track_frames: BTreeMap<TrackKey, u64> = BTreeMap::new();
    let mut track_hits: BTreeMap<TrackKey, BTreeMap<u64, u64>> = BTreeMap::new();
    let mut truth_instances = 0u64;
    let mut matched_instances = 0u64;

    for frame in frames {
        let gts = truth_by_frame.get(&frame).map(Vec::as_slice).unwrap_or(&[]);
        let trs = tracks_by_frame.get(&frame).map(Vec::as_slice).unwrap_or(&[]);
        truth_instances += gts.len() as u64;
        for t in trs {
            *track_frames.entry((t.channel, t.track_id)).or_default() += 1;
        }

        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (gi, g) in gts.iter().enumerate() {
            let (Some(gc), Ok(gb)) = (g.channel(), BoundingBox::try_from(g.bbox)) else {
                continue;
            };
            for (ti, t) in trs.iter().enumerate() {
                if t.channel != gc {
                    continue;
                }
                let Ok(tb) = BoundingBox::try_from(t.bbox) else { continue };
                let v = iou(&gb, &tb);
                if v >= opts.iou_threshold && v > 0.0 {
                    candidates.push((v, gi, ti));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut gt_used = vec![false; gts.len()];
        let mut tr_used = vec![false; trs.len()];
        for (_, gi, ti) in candidates {
            if gt_used[gi] || tr_used[ti] {
                continue;
            }
            gt_used[gi] = true;
            tr_used[ti] = true;
            matched_instances += 1;
            let object = gts[gi].object_id;
            let key = (trs[ti].channel, trs[ti].track_id);
            if let Some(prev) = last_id.insert(object, key) {
                if prev != key {
                    id_switches += 1;
                }
            }
            *track_hits.entry(key).or_default().entry(object).or_default() += 1;
        }
    }

    let purities: Vec<f64> = track_frames
        .iter()
        .map(|(key, &total)| {
            let modal = track_hits.get(key).and_then(|h| h.values().max().copied()).unwrap_or(0);
            modal as f64 / total as f64
        })
        .collect();
    let track_purity = if purities.is_empty() {
        1.0
    } else {
        purities.iter().sum::<f64>() / purities.len() as f64
    };
    let false_track_count = track_frames.keys().filter(|k| !track_hits.contains_key(k)).count() as u64;
    let miss_rate = if truth_instances == 0 {
        0.0
    } else {
        (truth_instances - matched_instances) as f64 / truth_instances as f64
    };
    EvalReport {
        id_switches,
        track_purity,
        miss_rate,
        false_track_count,
        truth_instances,
        matched_instances,
        tracks: track_frames.len() as u64,
    }
}
