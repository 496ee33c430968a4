use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: &'static str,
    /// Output files relative to the run directory, manifest excluded.
    pub files: Vec<String>,
    pub wall_clock_seconds: f64,
}

/// Tracks an output directory and every file written into it.
pub struct RunDir {
    dir: PathBuf,
    files: Vec<String>,
    started: Instant,
}

impl RunDir {
    /// Creates `dir` if needed; its parent must already exist.
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        let parent = match dir.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        if !parent.is_dir() {
            return Err(CliError::usage(format!("output parent directory {} does not exist", parent.display())));
        }
        if !dir.exists() {
            std::fs::create_dir(dir).map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))?;
        } else if !dir.is_dir() {
            return Err(CliError::usage(format!("{} exists and is not a directory", dir.display())));
        }
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new(), started: Instant::now() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Records a file written by someone else.
    pub fn record(&mut self, path: &Path) {
        let name = path.strip_prefix(&self.dir).unwrap_or(path).to_string_lossy().into_owned();
        if !self.files.contains(&name) {
            self.files.push(name);
        }
    }

    pub fn write_json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<PathBuf, CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(format!("serializing {name}: {e}")))?;
        let path = self.path(name);
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))?;
        self.record(&path);
        Ok(path)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))?;
        self.record(&path);
        Ok(path)
    }

    /// Writes `manifest.json` via a temporary file and a rename.
    pub fn finish(self, command: Vec<String>, config: serde_json::Value, seed: u64) -> Result<(), CliError> {
        let manifest = RunManifest {
            command,
            config,
            seed,
            version: env!("CARGO_PKG_VERSION"),
            files: self.files,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let tmp = self.dir.join(format!("{MANIFEST_NAME}.tmp"));
        let fin = self.dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::io(e.to_string()))?;
        let mut f = std::fs::File::create(&tmp).map_err(|e| CliError::io(format!("writing {}: {e}", tmp.display())))?;
        f.write_all(text.as_bytes()).and_then(|_| f.write_all(b"\n")).and_then(|_| f.sync_all()).map_err(|e| CliError::io(e.to_string()))?;
        std::fs::rename(&tmp, &fin).map_err(|e| CliError::io(format!("renaming manifest: {e}")))?;
        Ok(())
    }
}
