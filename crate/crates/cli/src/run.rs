use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;

use crate::config::{canonical_bytes, config_hash};
use crate::exit::{CliError, ExitCode};

pub const RUN_MANIFEST: &str = "run.json";
pub const RUN_CONFIG: &str = "config.json";

/// Identity of a run: written as `run.json` inside its directory.
#[derive(Clone, Debug, Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    /// Files written by the run, relative to its directory.
    pub outputs: Vec<String>,
}

/// An open run directory guarded by a sibling lock file.
pub struct RunDir {
    pub path: PathBuf,
    command: String,
    hash: String,
    seed: u64,
    outputs: Vec<String>,
    lock: PathBuf,
}

fn unwritable(e: impl Into<anyhow::Error>) -> CliError {
    CliError::new(ExitCode::Unwritable, e.into())
}

impl RunDir {
    /// Creates `<out>/<command>-<hash12>-<seed>`, replacing any earlier run
    /// with the same identity, and stores the canonical config in it.
    pub fn create(out: &Path, command: &str, run_config: &Value, seed: u64) -> Result<Self, CliError> {
        let hash = config_hash(run_config);
        let name = format!("{command}-{}-{seed}", &hash[..12]);
        fs::create_dir_all(out)
            .with_context(|| format!("cannot create output directory {}", out.display()))
            .map_err(unwritable)?;
        let path = out.join(&name);
        let lock = out.join(format!("{name}.lock"));
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    CliError::new(
                        ExitCode::Locked,
                        anyhow::anyhow!("run directory {} is locked by {}", path.display(), lock.display()),
                    )
                } else {
                    unwritable(anyhow::Error::new(e).context(format!("cannot create lock file {}", lock.display())))
                }
            })?;
        let mut run = RunDir {
            path,
            command: command.to_string(),
            hash,
            seed,
            outputs: Vec::new(),
            lock,
        };
        if run.path.exists() {
            fs::remove_dir_all(&run.path)
                .with_context(|| format!("cannot clear {}", run.path.display()))
                .map_err(unwritable)?;
        }
        fs::create_dir_all(&run.path)
            .with_context(|| format!("cannot create {}", run.path.display()))
            .map_err(unwritable)?;
        let mut bytes = canonical_bytes(run_config);
        bytes.push(b'\n');
        run.write(RUN_CONFIG, &bytes)?;
        Ok(run)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let target = self.path.join(name);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(unwritable)?;
        }
        wscloc::io::write_atomic(&target, bytes)
            .with_context(|| format!("cannot write {}", target.display()))
            .map_err(unwritable)?;
        self.record(name);
        Ok(())
    }

    /// Lists a file that was written into the directory by other means.
    pub fn record(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::new(ExitCode::Failure, e.into()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Writes `run.json` and releases the lock.
    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        let mut outputs = self.outputs.clone();
        outputs.push(RUN_MANIFEST.to_string());
        outputs.sort();
        let manifest = RunManifest {
            command: self.command.clone(),
            config_hash: self.hash.clone(),
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs,
        };
        self.write_json(RUN_MANIFEST, &manifest)?;
        Ok(self.path.clone())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

pub fn read_manifest(dir: &Path) -> anyhow::Result<RunManifest> {
    let path = dir.join(RUN_MANIFEST);
    let file = File::open(&path).with_context(|| format!("cannot open {}", path.display()))?;
    serde_json::from_reader(file).with_context(|| format!("cannot parse {}", path.display()))
}

pub fn read_run_config(dir: &Path) -> anyhow::Result<Value> {
    let path = dir.join(RUN_CONFIG);
    let file = File::open(&path).with_context(|| format!("cannot open {}", path.display()))?;
    serde_json::from_reader(file).with_context(|| format!("cannot parse {}", path.display()))
}
