//! Data files and the run manifest.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// One table cell.
#[derive(Debug, Clone)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<i32> for Cell {
    fn from(v: i32) -> Self {
        Cell::I(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::F)
    }
}

impl Cell {
    fn text(&self) -> String {
        match self {
            // Display for f64 is the shortest string that round-trips
            Cell::F(v) => format!("{v}"),
            Cell::I(v) => v.to_string(),
            Cell::S(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::F(v) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
            Cell::I(v) => Value::from(*v),
            Cell::S(s) => Value::from(s.as_str()),
            Cell::Empty => Value::Null,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Collects emitted files in order; [`Output::finish`] writes the manifest.
pub struct Output {
    dir: PathBuf,
    format: Format,
    files: Vec<FileEntry>,
}

impl Output {
    pub fn new(dir: &Path, format: Format) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            format,
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: Vec<u8>) -> io::Result<()> {
        fs::write(self.dir.join(name), &bytes)?;
        let digest = Sha256::digest(&bytes);
        self.files.push(FileEntry {
            path: name.to_string(),
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            bytes: bytes.len(),
        });
        Ok(())
    }

    /// Writes a table as `<stem>.csv` or `<stem>.json` (array of row objects).
    pub fn table(&mut self, stem: &str, columns: &[&str], rows: &[Vec<Cell>]) -> io::Result<()> {
        match self.format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(columns)?;
                for r in rows {
                    w.write_record(r.iter().map(Cell::text))?;
                }
                let bytes = w.into_inner().map_err(|e| e.into_error())?;
                self.write(&format!("{stem}.csv"), bytes)
            }
            Format::Json => {
                let arr: Vec<Value> = rows
                    .iter()
                    .map(|r| {
                        let m: Map<String, Value> = columns
                            .iter()
                            .zip(r)
                            .map(|(c, v)| (c.to_string(), v.json()))
                            .collect();
                        Value::Object(m)
                    })
                    .collect();
                self.json_value(&format!("{stem}.json"), &Value::Array(arr))
            }
        }
    }

    pub fn json_value(&mut self, name: &str, value: &Value) -> io::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, bytes)
    }

    /// Writes `manifest.json`; the timestamp lives only here.
    pub fn finish(self, config: &Value) -> io::Result<Vec<FileEntry>> {
        let manifest = serde_json::json!({
            "tool": "normhyp",
            "version": env!("CARGO_PKG_VERSION"),
            "timestamp": chrono::Utc::now().to_rfc3339(),
            "config": config,
            "files": self.files,
        });
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(self.dir.join("manifest.json"), bytes)?;
        Ok(self.files)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, -0.060959, 1.0 / 3.0, 1e-300, 6.02e23] {
            let s = Cell::F(v).text();
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(Cell::Empty.text(), "");
        assert_eq!(Cell::F(f64::NAN).json(), Value::Null);
    }

    #[test]
    fn empty_run_has_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = Output::new(dir.path(), Format::Csv).unwrap();
        let files = out.finish(&Value::Null).unwrap();
        assert!(files.is_empty());
        let m: Value = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["files"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn digest_matches_content() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Output::new(dir.path(), Format::Csv).unwrap();
        out.table("t", &["x", "y"], &[vec![1.5.into(), "a".into()]]).unwrap();
        let files = out.finish(&Value::Null).unwrap();
        let bytes = fs::read(dir.path().join("t.csv")).unwrap();
        assert_eq!(bytes, b"x,y\n1.5,a\n");
        let d: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(files[0].sha256, d);
    }
}
