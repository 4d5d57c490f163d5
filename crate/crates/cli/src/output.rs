//! Atomic file output, CSV headers and versioned JSON reports.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::{ConfigError, RunConfig};

pub const SCHEMA_VERSION: u32 = 1;
const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Write all files or none: on failure the ones already renamed are removed.
pub fn write_all(files: &[(PathBuf, Vec<u8>)]) -> Result<(), String> {
    for (i, (path, bytes)) in files.iter().enumerate() {
        if let Err(e) = write_atomic(path, bytes) {
            for (done, _) in &files[..i] {
                let _ = std::fs::remove_file(done);
            }
            return Err(format!("writing {}: {e}", path.display()));
        }
    }
    Ok(())
}

/// JSON sidecar next to a CSV output.
pub fn sidecar_path(out: &Path) -> Result<PathBuf, ConfigError> {
    let side = out.with_extension("json");
    if side == out {
        return Err(ConfigError::new("out", "must not end in .json: the JSON sidecar takes that name"));
    }
    Ok(side)
}

fn config_json(config: &RunConfig) -> String {
    serde_json::to_string(config).expect("config serializes")
}

/// `#` lines echoing the tool, command and resolved config.
pub fn csv_header(command: &str, config: &RunConfig) -> String {
    format!("# ou-fpt {VERSION} {command}\n# config: {}\n", config_json(config))
}

/// Quote a CSV field when it contains a separator, quote or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Versioned report: header fields followed by those of `body`.
pub fn report<T: Serialize>(command: &str, config: &RunConfig, body: &T) -> Vec<u8> {
    let mut map = Map::new();
    map.insert("schema_version".into(), SCHEMA_VERSION.into());
    map.insert("tool_version".into(), VERSION.into());
    map.insert("command".into(), command.into());
    map.insert("config".into(), serde_json::to_value(config).expect("config serializes"));
    match serde_json::to_value(body).expect("report serializes") {
        Value::Object(fields) => map.extend(fields),
        other => {
            map.insert("result".into(), other);
        }
    }
    let mut bytes = serde_json::to_vec_pretty(&Value::Object(map)).expect("report serializes");
    bytes.push(b'\n');
    bytes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_cleans_up() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn failed_batch_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let ok = dir.path().join("a.csv");
        let bad = dir.path().join("missing").join("b.json");
        let err = write_all(&[(ok.clone(), b"a".to_vec()), (bad, b"b".to_vec())]).unwrap_err();
        assert!(err.contains("b.json"));
        assert!(!ok.exists());
    }

    #[test]
    fn sidecar_and_fields() {
        assert_eq!(sidecar_path(Path::new("d/s.csv")).unwrap(), Path::new("d/s.json"));
        assert_eq!(sidecar_path(Path::new("s")).unwrap(), Path::new("s.json"));
        assert!(sidecar_path(Path::new("s.json")).is_err());
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a, \"b\""), "\"a, \"\"b\"\"\"");
    }

    #[test]
    fn report_has_schema_version() {
        let v: Value = serde_json::from_slice(&report("moments", &RunConfig::default(), &serde_json::json!({"mean": 1.0}))).unwrap();
        assert_eq!(v["schema_version"], SCHEMA_VERSION);
        assert_eq!(v["command"], "moments");
        assert_eq!(v["mean"], 1.0);
    }
}
