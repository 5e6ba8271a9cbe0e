use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bugloc_core::checkpoint::write_atomic;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::manifest::{ExperimentManifest, Stage};

pub const RECORD_FILE: &str = "record.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A file a stage wrote, named `<first 16 hex of sha256>.<ext>` inside the
/// stage directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRef {
    pub role: String,
    pub file: String,
    pub sha256: String,
}

/// An input a stage read: another stage's output or an external file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRef {
    /// `<stage>.<role>`, or `external` for files named by the manifest.
    pub source: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub stage: Stage,
    /// Digest of the stage, its configuration and its input hashes.
    pub key: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<InputRef>,
    pub outputs: Vec<OutputRef>,
    pub wall_time_secs: f64,
}

/// Bytes a stage produced, before they are stored.
pub struct Output {
    pub role: &'static str,
    pub ext: &'static str,
    pub bytes: Vec<u8>,
}

impl Output {
    pub fn new(role: &'static str, ext: &'static str, bytes: Vec<u8>) -> Self {
        Self { role, ext, bytes }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Skipped,
}

pub fn stage_dir(manifest: &ExperimentManifest, stage: Stage) -> PathBuf {
    manifest.experiment_dir().join(stage.name())
}

pub fn record_path(manifest: &ExperimentManifest, stage: Stage) -> PathBuf {
    stage_dir(manifest, stage).join(RECORD_FILE)
}

/// The record of a completed stage; `requester` is named when it is absent.
pub fn read_record(manifest: &ExperimentManifest, stage: Stage, requester: Stage) -> Result<RunRecord> {
    let path = record_path(manifest, stage);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::MissingInput { stage: requester, path })
        }
        Err(e) => return Err(CliError::Io { path, source: e }),
    };
    serde_json::from_str(&text).map_err(|e| CliError::Io {
        path,
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}

/// Reads a file and checks it against its recorded hash.
fn read_verified(path: &Path, expected: &str, requester: Stage) -> Result<Vec<u8>> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::MissingInput {
                stage: requester,
                path: path.to_path_buf(),
            })
        }
        Err(e) => return Err(CliError::io(path)(e)),
    };
    let found = sha256_hex(&bytes);
    if found != expected {
        return Err(CliError::Stale {
            stage: requester,
            path: path.to_path_buf(),
            expected: expected.to_string(),
            found,
        });
    }
    Ok(bytes)
}

/// Inputs gathered for one stage execution, in the order they were read.
pub struct Inputs<'m> {
    manifest: &'m ExperimentManifest,
    stage: Stage,
    refs: Vec<InputRef>,
    loaded: Vec<Vec<u8>>,
}

impl<'m> Inputs<'m> {
    pub fn new(manifest: &'m ExperimentManifest, stage: Stage) -> Self {
        Self {
            manifest,
            stage,
            refs: Vec::new(),
            loaded: Vec::new(),
        }
    }

    /// Bytes of `role` from the latest run of `from`, hash-checked.
    pub fn artifact(&mut self, from: Stage, role: &str) -> Result<&[u8]> {
        let record = read_record(self.manifest, from, self.stage)?;
        let dir = stage_dir(self.manifest, from);
        let out = record
            .outputs
            .iter()
            .find(|o| o.role == role)
            .ok_or_else(|| CliError::MissingInput {
                stage: self.stage,
                path: dir.join(format!("<{role}>")),
            })?;
        let path = dir.join(&out.file);
        let bytes = read_verified(&path, &out.sha256, self.stage)?;
        self.push(format!("{from}.{role}"), path, bytes)
    }

    pub fn text(&mut self, from: Stage, role: &str) -> Result<String> {
        let stage = self.stage;
        let bytes = self.artifact(from, role)?.to_vec();
        String::from_utf8(bytes).map_err(|e| CliError::Stage {
            stage,
            source: bugloc_core::Error::InvalidArgument(format!("{from}.{role} is not UTF-8: {e}")),
        })
    }

    pub fn external(&mut self, path: &Path) -> Result<String> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(CliError::MissingInput {
                    stage: self.stage,
                    path: path.to_path_buf(),
                })
            }
            Err(e) => return Err(CliError::io(path)(e)),
        };
        let stage = self.stage;
        let bytes = self.push("external".into(), path.to_path_buf(), bytes)?.to_vec();
        String::from_utf8(bytes).map_err(|e| CliError::Stage {
            stage,
            source: bugloc_core::Error::InvalidArgument(format!("{} is not UTF-8: {e}", path.display())),
        })
    }

    fn push(&mut self, source: String, path: PathBuf, bytes: Vec<u8>) -> Result<&[u8]> {
        self.refs.push(InputRef {
            source,
            path,
            sha256: sha256_hex(&bytes),
        });
        self.loaded.push(bytes);
        Ok(self.loaded.last().expect("just pushed"))
    }

    fn key(&self, config: &serde_json::Value) -> String {
        let hashes: Vec<(&str, &str)> =
            self.refs.iter().map(|r| (r.source.as_str(), r.sha256.as_str())).collect();
        let doc = serde_json::json!({ "stage": self.stage, "config": config, "inputs": hashes });
        sha256_hex(doc.to_string().as_bytes())
    }
}

/// Runs one stage unless its previous record has the same key and intact
/// outputs. `load` gathers inputs; `compute` turns them into outputs.
pub fn execute<'m, T>(
    manifest: &'m ExperimentManifest,
    stage: Stage,
    load: impl FnOnce(&mut Inputs<'m>) -> Result<T>,
    compute: impl FnOnce(T) -> Result<Vec<Output>>,
) -> Result<Outcome> {
    let started = Instant::now();
    let mut inputs = Inputs::new(manifest, stage);
    let loaded = load(&mut inputs)?;
    let config = manifest.stage_config(stage);
    let key = inputs.key(&config);
    let dir = stage_dir(manifest, stage);

    if let Ok(previous) = read_record(manifest, stage, stage) {
        if previous.key == key {
            let mut intact = true;
            for out in &previous.outputs {
                match read_verified(&dir.join(&out.file), &out.sha256, stage) {
                    Ok(_) => {}
                    Err(CliError::MissingInput { .. }) => intact = false,
                    Err(e) => return Err(e),
                }
            }
            if intact {
                return Ok(Outcome::Skipped);
            }
        }
    }

    let produced = compute(loaded)?;
    fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    let mut outputs = Vec::with_capacity(produced.len());
    for out in produced {
        let sha256 = sha256_hex(&out.bytes);
        let file = format!("{}.{}", &sha256[..16], out.ext);
        let path = dir.join(&file);
        write_atomic(&path, &out.bytes).map_err(|source| CliError::Stage { stage, source })?;
        outputs.push(OutputRef {
            role: out.role.to_string(),
            file,
            sha256,
        });
    }
    let record = RunRecord {
        stage,
        key,
        seed: manifest.seed,
        config,
        inputs: inputs.refs,
        outputs,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_vec_pretty(&record).expect("records serialize");
    let record_file = dir.join(RECORD_FILE);
    write_atomic(&record_file, &json).map_err(|source| CliError::Stage { stage, source })?;
    remove_orphans(&dir, &record)?;
    Ok(Outcome::Ran)
}

/// Deletes files in `dir` that the record does not list.
fn remove_orphans(dir: &Path, record: &RunRecord) -> Result<()> {
    let keep: BTreeSet<&str> = record
        .outputs
        .iter()
        .map(|o| o.file.as_str())
        .chain(std::iter::once(RECORD_FILE))
        .collect();
    for entry in fs::read_dir(dir).map_err(CliError::io(dir))? {
        let entry = entry.map_err(CliError::io(dir))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if entry.path().is_file() && !keep.contains(name.as_ref()) {
            fs::remove_file(entry.path()).map_err(CliError::io(entry.path()))?;
        }
    }
    Ok(())
}

/// Path of `role` in the latest record of `stage`.
pub fn output_path(manifest: &ExperimentManifest, stage: Stage, role: &str) -> Result<PathBuf> {
    let record = read_record(manifest, stage, stage)?;
    let dir = stage_dir(manifest, stage);
    record
        .outputs
        .iter()
        .find(|o| o.role == role)
        .map(|o| dir.join(&o.file))
        .ok_or_else(|| CliError::MissingInput {
            stage,
            path: dir.join(format!("<{role}>")),
        })
}
