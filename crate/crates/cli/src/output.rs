//! Output staging, content hashes and run manifests.

use std::fs::{self, File};
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of an input file, streamed so large embedding files are not held in memory.
pub fn hash_input(path: &Path) -> Result<FileRecord> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut reader = BufReader::with_capacity(1 << 20, file);
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    let mut bytes = 0u64;
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(FileRecord {
        path: path.to_path_buf(),
        sha256: hex::encode(hasher.finalize()),
        bytes,
    })
}

/// Outputs are written to temporary files next to their destination and
/// only renamed into place by [`Staged::commit`]. Dropping without
/// committing removes the temporaries.
#[derive(Default)]
pub struct Staged {
    files: Vec<(NamedTempFile, PathBuf)>,
    records: Vec<FileRecord>,
}

impl Staged {
    pub fn add(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = NamedTempFile::new_in(dir).with_context(|| format!("cannot write in {}", dir.display()))?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        self.records.push(FileRecord {
            path: path.to_path_buf(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        self.files.push((tmp, path.to_path_buf()));
        Ok(())
    }

    pub fn records(&self) -> &[FileRecord] {
        &self.records
    }

    pub fn commit(self) -> Result<Vec<FileRecord>> {
        for (tmp, dst) in self.files {
            tmp.persist(&dst)
                .with_context(|| format!("cannot move output into place at {}", dst.display()))?;
        }
        Ok(self.records)
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

/// `model.hprj` + `loss.csv` → `model.loss.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub stage: &'static str,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub version: &'static str,
    pub config: serde_json::Value,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub timings: Vec<Timing>,
}

impl RunManifest {
    pub fn new(command: &'static str, config: serde_json::Value) -> Self {
        RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
        }
    }

    /// Runs `f` and records its wall-clock time under `stage`.
    pub fn time<T>(&mut self, stage: &'static str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(Timing {
            stage,
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(hash_input(path)?);
        Ok(())
    }

    /// Stages the manifest itself after the other outputs, then commits everything.
    pub fn finish(mut self, mut staged: Staged, path: &Path) -> Result<()> {
        self.outputs = staged.records().to_vec();
        let mut json = serde_json::to_vec_pretty(&self)?;
        json.push(b'\n');
        staged.add(path, &json)?;
        staged.commit()?;
        Ok(())
    }
}
