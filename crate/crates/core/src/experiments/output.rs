//! CSV tables and the JSON run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::af::AfSlices;
use super::to_db;
use crate::config::RunConfig;
use crate::error::{Error, Result};

fn io(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Output(format!("{}: {e}", path.display()))
}

/// Output directory; created on demand.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| io(&root, e))?;
        Ok(OutputDir {
            root,
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[String] {
        &self.written
    }

    /// One header row from the field names, then one row per record.
    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<PathBuf> {
        let path = self.root.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, e))?;
        for r in rows {
            w.serialize(r).map_err(|e| io(&path, e))?;
        }
        w.flush().map_err(|e| io(&path, e))?;
        self.written.push(name.to_string());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.root.join(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| io(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| io(&path, e))?;
        self.written.push(name.to_string());
        Ok(path)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub workers: usize,
    pub wall_time_s: f64,
    pub files: Vec<String>,
    /// Headline numbers of the run.
    pub summary: serde_json::Value,
    pub config: &'a RunConfig,
}

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Long-format AF cut: one row per design, slice and offset.
#[derive(Debug, Clone, Serialize)]
pub struct AfRow {
    pub eta: f64,
    /// `zero_doppler` (offset is a delay) or `zero_delay` (offset is a Doppler).
    pub slice: &'static str,
    pub offset: i64,
    pub af_rel_mainlobe: f64,
    pub af_rel_mainlobe_db: f64,
}

pub fn af_rows(slices: &[AfSlices]) -> Vec<AfRow> {
    let mut out = Vec::new();
    for s in slices {
        for (slice, cut) in [("zero_doppler", &s.zero_doppler), ("zero_delay", &s.zero_delay)] {
            for &(offset, v) in cut {
                out.push(AfRow {
                    eta: s.eta,
                    slice,
                    offset,
                    af_rel_mainlobe: v,
                    af_rel_mainlobe_db: to_db(v),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        snr_db: f64,
        rate_bits: f64,
    }

    #[test]
    fn csv_has_named_header() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path().join("run")).unwrap();
        let p = out
            .write_csv(
                "x.csv",
                &[
                    Row {
                        snr_db: 0.0,
                        rate_bits: 1.5,
                    },
                    Row {
                        snr_db: 5.0,
                        rate_bits: 2.0,
                    },
                ],
            )
            .unwrap();
        let text = fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().next(), Some("snr_db,rate_bits"));
        assert_eq!(text.lines().count(), 3);
        assert_eq!(out.files(), ["x.csv"]);
    }
}
