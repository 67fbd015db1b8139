//! Output directories, lock files and run manifests.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ProjectConfig;
use crate::{CliError, Command};

pub const MANIFEST: &str = "manifest.json";
const LOCK: &str = ".lock";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Deterministic run id: command name plus a digest of the command and the
/// resolved configuration.
pub fn default_run_id(command: &Command, config: &ProjectConfig) -> String {
    let key = serde_json::to_string(&(command, config)).expect("serializable");
    format!("{}-{}", command.name(), &sha256_hex(key.as_bytes())[..12])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub config: ProjectConfig,
    pub code_version: String,
    /// Input files and their SHA-256 digests.
    pub inputs: BTreeMap<String, String>,
    /// Output files, relative to the run directory, and their digests.
    pub outputs: BTreeMap<String, String>,
    pub cache_hits: Vec<String>,
    pub wall_time_seconds: f64,
}

/// A run directory held under an exclusive lock file for its lifetime.
pub struct RunDir {
    pub path: PathBuf,
    outputs: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub cache_hits: Vec<String>,
}

impl RunDir {
    pub fn open(root: &Path, id: &str) -> Result<Self, CliError> {
        let path = root.join(id);
        fs::create_dir_all(&path)?;
        match OpenOptions::new().write(true).create_new(true).open(path.join(LOCK)) {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(CliError::Config(format!("{} is locked by another run", path.display())));
            }
            Err(e) => return Err(e.into()),
        }
        Ok(Self { path, outputs: BTreeMap::new(), inputs: BTreeMap::new(), cache_hits: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let bytes = contents.as_ref();
        fs::write(self.path.join(name), bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        let digest = hash_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn finish(mut self, command: &Command, config: &ProjectConfig, wall: f64) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            command: command.clone(),
            config: config.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: std::mem::take(&mut self.inputs),
            outputs: std::mem::take(&mut self.outputs),
            cache_hits: std::mem::take(&mut self.cache_hits),
            wall_time_seconds: wall,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Numerical(e.to_string()))?;
        text.push('\n');
        fs::write(self.path.join(MANIFEST), text)?;
        Ok(manifest)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.path.join(LOCK));
        // Only succeeds when a failed run left nothing behind.
        let _ = fs::remove_dir(&self.path);
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let file = if path.is_dir() { path.join(MANIFEST) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| CliError::Config(format!("{}: {e}", file.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", file.display())))
}
