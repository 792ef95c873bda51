//! Fixed three-decimal number output for serde_json, so timestamps and
//! boxes diff cleanly in golden files.

use serde::Serializer;
use serde_json::value::RawValue;

pub fn fixed3(v: f64) -> String {
    // avoid "-0.000"
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

fn raw<S: Serializer>(text: String, s: S) -> Result<S::Ok, S::Error> {
    let raw = RawValue::from_string(text).map_err(serde::ser::Error::custom)?;
    s.serialize_some(&raw)
}

pub fn ts<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if !v.is_finite() {
        return Err(serde::ser::Error::custom("non-finite timestamp"));
    }
    raw(fixed3(*v), s)
}

pub fn bbox<S: Serializer>(v: &[f64; 4], s: S) -> Result<S::Ok, S::Error> {
    let parts: Vec<String> = v.iter().map(|x| fixed3(*x)).collect();
    raw(format!("[{}]", parts.join(",")), s)
}
