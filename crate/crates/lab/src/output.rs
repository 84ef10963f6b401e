//! Output directory with CSV, JSON and JSON-lines writers, and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::LabError;

/// Shortest round-trip decimal form; identical bits give identical text.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn nums(vs: &[f64]) -> Vec<String> {
    vs.iter().map(|v| num(*v)).collect()
}

/// Column names `prefix0, prefix1, ...` for a `dim`-vector.
pub fn axes(prefix: &str, dim: usize) -> Vec<String> {
    (0..dim).map(|a| format!("{prefix}{a}")).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

/// Collects every file written during a run.
pub struct OutDir {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, LabError> {
        fs::create_dir_all(dir)?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[OutputFile] {
        &self.files
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), LabError> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.push(OutputFile {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    pub fn csv(
        &mut self,
        name: &str,
        header: &[String],
        rows: &[Vec<String>],
    ) -> Result<(), LabError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| LabError::Io(e.into_error()))?;
        self.write(name, &bytes)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), LabError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn jsonl<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<(), LabError> {
        let mut bytes = Vec::new();
        for r in records {
            serde_json::to_writer(&mut bytes, r)?;
            bytes.push(b'\n');
        }
        self.write(name, &bytes)
    }
}

/// Written last as `manifest.json`; lists every other output.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub workers: usize,
    /// Id of the solution the outputs derive from, if any.
    pub solution_id: Option<String>,
    pub passed: bool,
    pub timing_ms: f64,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<(), LabError> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fs::write(dir.join("manifest.json"), bytes)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-17, 1e300] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(1.0), "1");
    }

    #[test]
    fn files_are_recorded_with_digests() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = OutDir::create(tmp.path()).unwrap();
        out.csv("a.csv", &["x".into(), "u".into()], &[nums(&[0.5, 1.0])])
            .unwrap();
        assert_eq!(
            fs::read_to_string(tmp.path().join("a.csv")).unwrap(),
            "x,u\n0.5,1\n"
        );
        assert_eq!(out.files().len(), 1);
        assert_eq!(out.files()[0].sha256.len(), 64);
    }
}
