use classwatch::io::session::{run_frames, SessionConfig};
use classwatch::io::stream::FrameBatch;
use classwatch::recognition::{AttendanceStatus, Gallery, GalleryEntry};
use classwatch::{BoundingBox, ClassLabel, Detection};

fn gallery() -> Gallery {
    let entry = |id: &str, axis: usize| {
        let mut e = vec![0.0; 4];
        e[axis] = 1.0;
        GalleryEntry {
            student_id: id.into(),
            display_name: id.to_uppercase(),
            embedding: e,
        }
    };
    Gallery::new(vec![entry("s1", 0), entry("s2", 1), entry("s3", 2)]).unwrap()
}

/// Probe whose cosine with s1 is `c` and with every other entry is 0.
fn probe(c: f64) -> Vec<f64> {
    vec![c, 0.0, 0.0, (1.0 - c * c).sqrt()]
}

fn face_stream(embedding: Vec<f64>, frames: u64) -> Vec<FrameBatch> {
    (0..frames)
        .map(|f| {
            let ts = f as f64 * 0.1;
            FrameBatch {
                frame_index: f,
                timestamp: ts,
                detections: vec![Detection {
                    frame_index: f,
                    timestamp: ts,
                    label: ClassLabel::Face,
                    bbox: BoundingBox::new(10.0, 10.0, 50.0, 60.0).unwrap(),
                    confidence: 0.95,
                    embedding: Some(embedding.clone()),
                    logits: None,
                }],
            }
        })
        .collect()
}

#[test]
fn threshold_boundary_decides_attendance() {
    let g = gallery();
    let out = run_frames(SessionConfig::default(), &g, &face_stream(probe(0.71), 5)).unwrap();
    let s1 = out.attendance.get("s1").unwrap();
    assert_eq!(s1.status, AttendanceStatus::Present);
    assert_eq!(s1.first_seen, Some(0.0));
    assert!((s1.last_seen.unwrap() - 0.4).abs() < 1e-12);
    assert_eq!(out.summary.present, 1);

    let out = run_frames(SessionConfig::default(), &g, &face_stream(probe(0.69), 5)).unwrap();
    assert!(out.attendance.records().iter().all(|r| r.status == AttendanceStatus::Absent));
    assert!(out.tracks.iter().all(|t| t.student_id.is_none()));
}

#[test]
fn lowered_threshold_admits_weaker_match() {
    let cfg = SessionConfig {
        sim_threshold: 0.65,
        ..SessionConfig::default()
    };
    let out = run_frames(cfg, &gallery(), &face_stream(probe(0.69), 5)).unwrap();
    assert!(out.attendance.is_present("s1"));
}

#[test]
fn empty_gallery_binds_nothing() {
    let g = Gallery::new(vec![]).unwrap();
    let out = run_frames(SessionConfig::default(), &g, &face_stream(probe(1.0), 5)).unwrap();
    assert!(out.attendance.records().is_empty());
    assert_eq!(out.tracks.len(), 5);
}
