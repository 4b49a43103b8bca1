//! Deterministic artifact serialization.
//!
//! Artifacts are written as pretty-printed JSON with lexicographically sorted
//! keys (the `serde_json::Map` default ordering), UTF-8, trailing newline.
//! Weights use fixed 6-decimal formatting and confidences 4 decimals; all
//! other floats use the shortest round-trip representation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Serialize, Serializer};
use serde_json::{Number, Value};
use sha2::{Digest, Sha256};

use crate::error::{Result, SaaError};

pub fn fixed_string(x: f64, dp: usize) -> String {
    let s = format!("{x:.dp$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// A JSON number carrying exactly `dp` decimals.
pub fn fixed(x: f64, dp: usize) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    Value::Number(Number::from_str(&fixed_string(x, dp)).expect("formatted float parses"))
}

pub fn dp4<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    fixed(*x, 4).serialize(s)
}

pub fn dp6<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    fixed(*x, 6).serialize(s)
}

pub fn weights6<S: Serializer>(w: &BTreeMap<String, f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let m: BTreeMap<&String, Value> = w.iter().map(|(k, v)| (k, fixed(*v, 6))).collect();
    m.serialize(s)
}

pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    // Round-tripping through `Value` sorts every object's keys.
    let v = serde_json::to_value(value)?;
    let mut out = serde_json::to_string_pretty(&v)?;
    out.push('\n');
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `contents` to `path` (creating parents) and returns its digest.
pub fn write_bytes(path: &Path, contents: &[u8]) -> Result<String> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| SaaError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| SaaError::io(path, e))?;
    Ok(sha256_hex(contents))
}

pub fn write_artifact<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<String> {
    write_bytes(path, to_canonical_string(value)?.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| SaaError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Sample {
        zeta: u8,
        #[serde(serialize_with = "dp4")]
        alpha: f64,
    }

    #[test]
    fn keys_are_sorted_and_fixed_decimals_kept() {
        let s = to_canonical_string(&Sample { zeta: 1, alpha: 0.7 }).unwrap();
        let a = s.find("alpha").unwrap();
        let z = s.find("zeta").unwrap();
        assert!(a < z);
        assert!(s.contains("\"alpha\": 0.7000"), "{s}");
    }

    #[test]
    fn negative_zero_is_normalized() {
        assert_eq!(fixed_string(-1e-12, 6), "0.000000");
        assert_eq!(fixed_string(-0.25, 2), "-0.25");
    }
}
