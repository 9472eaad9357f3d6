//! CSV artifacts, atomic writes and the run manifest.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Shortest round-trip decimal in scientific form, so reruns are byte-identical.
pub fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:e}")
    }
}

/// An in-memory CSV file: header row, LF endings, no quoting.
#[derive(Debug, Clone)]
pub struct Csv {
    text: String,
    width: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self { text, width: header.len() }
    }

    /// Append a row of already formatted cells.
    pub fn row<S: AsRef<str>>(&mut self, cells: &[S]) {
        debug_assert_eq!(cells.len(), self.width, "row width must match header");
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            self.text.push_str(c.as_ref());
        }
        self.text.push('\n');
    }

    pub fn numbers(&mut self, lead: &[String], values: &[f64]) {
        let mut cells: Vec<String> = lead.to_vec();
        cells.extend(values.iter().map(|&v| fmt_f(v)));
        self.row(&cells);
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn csv(name: &str, csv: Csv) -> Self {
        Self { name: name.to_string(), bytes: csv.into_bytes() }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub code_version: String,
    pub seed: Option<u64>,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    #[serde(default)]
    pub notes: Vec<String>,
    pub outputs: Vec<OutputEntry>,
}

pub const MANIFEST: &str = "manifest.toml";

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Write `bytes` to `dir/name` through a temporary file and rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, dir.join(name))
}

pub fn write_all(dir: &Path, artifacts: &[Artifact], manifest: &RunManifest) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for a in artifacts {
        write_atomic(dir, &a.name, &a.bytes)?;
    }
    let text = toml::to_string(manifest).map_err(|e| std::io::Error::other(e.to_string()))?;
    write_atomic(dir, MANIFEST, text.as_bytes())
}

pub fn read_manifest(dir: &Path) -> std::io::Result<RunManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST))?;
    toml::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
}

/// Differences between a stored manifest and freshly computed artifacts; empty means verified.
pub fn compare(stored: &RunManifest, config_sha256: &str, artifacts: &[Artifact]) -> Vec<String> {
    let mut out = Vec::new();
    if stored.config_sha256 != config_sha256 {
        out.push("config hash differs from the manifest".to_string());
    }
    for a in artifacts {
        let fresh = sha256_hex(&a.bytes);
        match stored.outputs.iter().find(|e| e.file == a.name) {
            None => out.push(format!("{} is not listed in the manifest", a.name)),
            Some(e) if e.sha256 != fresh => out.push(format!("{} checksum mismatch", a.name)),
            Some(_) => {}
        }
    }
    for e in &stored.outputs {
        if !artifacts.iter().any(|a| a.name == e.file) {
            out.push(format!("{} listed in the manifest but not produced", e.file));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-30, 6.02214076e23, 0.0] {
            let s = fmt_f(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f(1500.0), "1.5e3");
    }

    #[test]
    fn csv_layout() {
        let mut c = Csv::new(&["a", "b"]);
        c.numbers(&["0".into()], &[2.0]);
        assert_eq!(String::from_utf8(c.into_bytes()).unwrap(), "a,b\n0,2e0\n");
    }

    #[test]
    fn compare_flags_changes() {
        let a = Artifact { name: "x.csv".into(), bytes: b"1\n".to_vec() };
        let m = RunManifest {
            command: "modes".into(),
            config_sha256: "c".into(),
            code_version: "0".into(),
            seed: None,
            started_unix_s: 0.0,
            finished_unix_s: 0.0,
            notes: vec![],
            outputs: vec![OutputEntry { file: "x.csv".into(), sha256: sha256_hex(b"1\n") }],
        };
        assert!(compare(&m, "c", std::slice::from_ref(&a)).is_empty());
        let b = Artifact { name: "x.csv".into(), bytes: b"2\n".to_vec() };
        assert_eq!(compare(&m, "c", &[b]).len(), 1);
        assert_eq!(compare(&m, "d", &[a]).len(), 1);
    }
}
