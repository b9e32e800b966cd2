//! Run manifests: every command writes one JSON manifest next to its
//! outputs, recording the resolved configuration, input digests, outputs,
//! seed, tool version, and timestamps, which makes reruns auditable.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
struct RunManifest {
    command: String,
    tool_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    config: serde_json::Value,
    /// input path -> sha256 of contents (directories list each file)
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    started_unix: u64,
    finished_unix: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    skipped_chars: Option<String>,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                command: command.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                seed: None,
                config: serde_json::Value::Null,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                started_unix: now_unix(),
                finished_unix: 0,
                skipped_chars: None,
            },
        }
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.manifest.seed = Some(seed);
        self
    }

    pub fn config(&mut self, value: serde_json::Value) -> &mut Self {
        self.manifest.config = value;
        self
    }

    /// Records a digest of a file, or of every file under a directory.
    pub fn input(&mut self, path: impl AsRef<Path>) -> Result<&mut Self> {
        let path = path.as_ref();
        for file in files_under(path)? {
            let digest = sha256_file(&file)
                .with_context(|| format!("digesting {}", file.display()))?;
            self.manifest.inputs.insert(file.display().to_string(), digest);
        }
        Ok(self)
    }

    pub fn output(&mut self, path: impl AsRef<Path>) -> &mut Self {
        self.manifest.outputs.push(path.as_ref().display().to_string());
        self
    }

    pub fn skipped_chars(&mut self, chars: &[char]) -> &mut Self {
        if !chars.is_empty() {
            self.manifest.skipped_chars = Some(chars.iter().collect());
        }
        self
    }

    pub fn write(mut self, path: impl AsRef<Path>) -> Result<()> {
        self.manifest.finished_unix = now_unix();
        let json = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(path.as_ref(), json + "\n")
            .with_context(|| format!("writing manifest {}", path.as_ref().display()))?;
        Ok(())
    }
}

fn files_under(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files = Vec::new();
        let mut stack = vec![path.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir)? {
                let entry = entry?.path();
                if entry.is_dir() {
                    stack.push(entry);
                } else {
                    files.push(entry);
                }
            }
        }
        files.sort();
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let read = file.read(&mut buf)?;
        if read == 0 {
            break;
        }
        hasher.update(&buf[..read]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// `path` with `suffix` appended to its file name (`corpus.tsv` +
/// `.stats.json` -> `corpus.tsv.stats.json`).
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}
