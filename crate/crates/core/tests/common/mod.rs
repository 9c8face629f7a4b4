use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::Value;

/// Drops timing fields, which are the only intended run-to-run differences.
fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.remove("wall_clock_seconds");
            m.remove("seconds");
            m.values_mut().for_each(strip_timing);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

/// File name -> content with timing removed from JSON.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        let bytes = fs::read(&p).unwrap();
        let bytes = if name.ends_with(".json") {
            let mut v: Value = serde_json::from_slice(&bytes).unwrap();
            strip_timing(&mut v);
            serde_json::to_vec(&v).unwrap()
        } else {
            bytes
        };
        out.insert(name, bytes);
    }
    out
}

/// Names of files that differ between two output directories.
pub fn differing_files(a: &Path, b: &Path) -> Vec<String> {
    let (sa, sb) = (snapshot(a), snapshot(b));
    let mut names: Vec<String> = sa.keys().chain(sb.keys()).cloned().collect();
    names.sort();
    names.dedup();
    names.into_iter().filter(|n| sa.get(n) != sb.get(n)).collect()
}
