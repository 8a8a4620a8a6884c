//! Output bookkeeping: every command records what it wrote, writes a manifest
//! on success, and deletes its outputs on failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub command: &'a str,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: &'a [PathBuf],
    pub outputs: &'a [PathBuf],
    pub duration_secs: f64,
}

pub struct Run {
    command: &'static str,
    out_dir: PathBuf,
    created_dirs: Vec<PathBuf>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl Run {
    pub fn begin(command: &'static str, out_dir: &Path) -> Result<Self> {
        let mut run = Self {
            command,
            out_dir: out_dir.to_path_buf(),
            created_dirs: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        };
        run.dir(out_dir)?;
        Ok(run)
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Create a directory (and parents), remembering the ones that did not exist.
    pub fn dir(&mut self, dir: &Path) -> Result<()> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(d) = cur {
            if d.as_os_str().is_empty() || d.exists() {
                break;
            }
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        missing.reverse();
        self.created_dirs.extend(missing);
        Ok(())
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Register an output file under the run directory and return its path.
    pub fn output(&mut self, name: impl AsRef<Path>) -> PathBuf {
        let path = self.out_dir.join(name);
        self.outputs.push(path.clone());
        path
    }

    pub fn write(&mut self, name: impl AsRef<Path>, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.output(name);
        write_atomic(&path, bytes)?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: impl AsRef<Path>, value: &T) -> Result<PathBuf> {
        let mut json = serde_json::to_vec_pretty(value)?;
        json.push(b'\n');
        self.write(name, &json)
    }

    pub fn finish(mut self, config: serde_json::Value, seed: Option<u64>) -> Result<()> {
        let name = format!("{}.manifest.json", self.command);
        let manifest_path = self.out_dir.join(&name);
        let manifest = RunManifest {
            command: self.command,
            config,
            seed,
            inputs: &self.inputs,
            outputs: &self.outputs,
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let mut json = serde_json::to_vec_pretty(&manifest)?;
        json.push(b'\n');
        self.outputs.push(manifest_path.clone());
        write_atomic(&manifest_path, &json)
    }

    /// Remove every registered output and any directory this run created.
    pub fn abort(self) {
        for p in self.outputs.iter().rev() {
            let _ = fs::remove_file(p);
            let _ = fs::remove_file(tmp_path(p));
        }
        for d in self.created_dirs.iter().rev() {
            let _ = fs::remove_dir_all(d);
        }
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".tmp");
    PathBuf::from(s)
}

/// Write to a sibling temporary file, then rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot move {} into place", path.display()))
}
