//! Atomic file output: everything is written to a temporary file in the
//! target directory and renamed into place, so an interrupted run never
//! leaves a partial file behind.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

/// Output directory of one run.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, CliError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        write_atomic(&self.path(name), bytes)?;
        Ok(self.path(name))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize to JSON");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes a CSV file from a header and rows of numbers. Values use the
    /// shortest representation that round-trips, in exponent form outside
    /// [1e-4, 1e16).
    pub fn write_csv(&self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<PathBuf, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let path = self.path(name);
        let fail = |e: csv::Error| CliError::io(&path, std::io::Error::other(e));
        w.write_record(header).map_err(fail)?;
        for row in rows {
            w.write_record(row.iter().map(|&v| format_number(v))).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::io(&path, std::io::Error::other(e.to_string())))?;
        self.write(name, &bytes)
    }
}

fn format_number(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_land_whole_and_leave_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::create(dir.path().join("run")).unwrap();
        out.write_csv("a.csv", &["t", "x"], [vec![0.1, 1e-300], vec![2.0, -3.5]]).unwrap();
        let text = std::fs::read_to_string(out.path("a.csv")).unwrap();
        assert_eq!(text, "t,x\n0.1,1e-300\n2,-3.5\n");
        let names: Vec<_> = std::fs::read_dir(out.root()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("a.csv")]);
    }

    #[test]
    fn unwritable_target_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("no/such/dir/file.json");
        assert!(matches!(write_atomic(&missing, b"{}"), Err(CliError::Io { .. })));
        assert!(!missing.exists());
    }
}
