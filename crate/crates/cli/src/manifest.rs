use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use poolfund::artifact::sha256_hex;
use serde::Serialize;
use serde_json::Value;

use crate::Failure;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self, Failure> {
        let data = fs::read(path).map_err(|e| Failure::io(path, e))?;
        Ok(Self { path: path.display().to_string(), sha256: sha256_hex(&data), bytes: data.len() as u64 })
    }
}

/// Everything needed to rerun a command and check its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Resolved flag values; feeding them back through `--config` reruns the command.
    pub config: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub details: BTreeMap<String, Value>,
    pub started_at: String,
    pub finished_at: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub struct Run {
    out_dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    pub fn new(command: &str, out_dir: &Path, config: BTreeMap<String, String>) -> Result<Self, Failure> {
        fs::create_dir_all(out_dir).map_err(|e| Failure::io(out_dir, e))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            manifest: RunManifest {
                tool: "poolfund",
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                config,
                seed: None,
                details: BTreeMap::new(),
                started_at: now(),
                finished_at: String::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("detail serializes");
        self.manifest.details.insert(key.to_string(), v);
    }

    pub fn input(&mut self, path: &Path) -> Result<(), Failure> {
        self.manifest.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Writes `bytes` to `name` under the output directory, reads it back
    /// and records its digest.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| Failure::io(&path, e))?;
        let back = fs::read(&path).map_err(|e| Failure::io(&path, e))?;
        if back != bytes {
            return Err(Failure::Runtime(format!("{} did not read back as written", path.display())));
        }
        self.record(&path)?;
        Ok(path)
    }

    /// Records a file written by someone else.
    pub fn record(&mut self, path: &Path) -> Result<(), Failure> {
        self.manifest.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf, Failure> {
        self.manifest.finished_at = now();
        let name = format!("{}-manifest.json", self.manifest.command);
        let path = self.path(&name);
        let mut json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        json.push('\n');
        fs::write(&path, json).map_err(|e| Failure::io(&path, e))?;
        Ok(path)
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}
