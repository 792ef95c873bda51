#![allow(dead_code)]

use std::path::Path;

use classwatch::io::scene::{LabelChange, NoiseModel, SceneObject, SceneScript, Waypoint};
use classwatch::ClassLabel;

pub fn unit(dim: usize, axis: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[axis] = 1.0;
    v
}

/// Unit vector with cosine `c` against `unit(3, 0)`.
pub fn at_cosine(c: f64) -> Vec<f64> {
    vec![c, (1.0 - c * c).sqrt(), 0.0]
}

pub fn gallery_json() -> String {
    serde_json::json!([
        {"student_id": "s1", "display_name": "Ada", "embedding": unit(3, 0)},
        {"student_id": "s2", "display_name": "Grace", "embedding": unit(3, 1)},
        {"student_id": "s3", "display_name": "Alan", "embedding": unit(3, 2)},
    ])
    .to_string()
}

pub fn write_gallery(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("gallery.json");
    std::fs::write(&p, gallery_json()).unwrap();
    p
}

pub fn still(label: ClassLabel, cx: f64, cy: f64, w: f64, h: f64) -> SceneObject {
    SceneObject {
        label,
        waypoints: vec![Waypoint { t: 0.0, cx, cy, w, h }],
        visible: None,
        label_changes: vec![],
        identity: None,
        embedding: None,
        confidence: 0.9,
    }
}

/// Two students, one dozing off at 2 s, one on a phone from 3 s to 8 s.
/// The third gallery student never shows up.
pub fn classroom() -> SceneScript {
    let mut ada = still(ClassLabel::Face, 100.0, 100.0, 40.0, 40.0);
    ada.identity = Some("s1".into());
    ada.embedding = Some(unit(3, 0));
    let mut grace = still(ClassLabel::Face, 300.0, 100.0, 40.0, 40.0);
    grace.identity = Some("s2".into());
    grace.embedding = Some(unit(3, 1));
    let mut sleepy = still(ClassLabel::SleepAwake, 300.0, 140.0, 60.0, 60.0);
    sleepy.label_changes = vec![LabelChange { t: 2.0, label: ClassLabel::SleepAsleep }];
    let mut phone = still(ClassLabel::Phone, 120.0, 150.0, 20.0, 30.0);
    phone.visible = Some(vec![[3.0, 8.0]]);
    SceneScript {
        fps: 10.0,
        duration: 12.0,
        seed: 11,
        noise: NoiseModel::default(),
        objects: vec![ada, grace, sleepy, phone],
    }
}
