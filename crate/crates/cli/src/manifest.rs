//! Run manifests and file helpers.

use std::fs;
use std::path::{Path, PathBuf};

use casemix_core::pipeline::sha256_hex;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const MANIFEST_VERSION: &str = "casemix-manifest/1";
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a command and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub tool_version: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_sha256: Option<String>,
    /// Configuration after seed resolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<Value>,
    pub inputs: IndexMap<String, InputFile>,
    pub svg: bool,
    pub seeds: Value,
    /// Output path relative to the output location, and its SHA-256.
    pub outputs: IndexMap<String, String>,
}

pub fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

pub fn read_input_text(path: &Path) -> CliResult<String> {
    String::from_utf8(read_input(path)?).map_err(|_| CliError::input(format!("{} is not UTF-8", path.display())))
}

pub fn input_file(path: &Path) -> CliResult<InputFile> {
    Ok(InputFile {
        path: path.display().to_string(),
        sha256: sha256_hex(&read_input(path)?),
    })
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// Writes via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Collects output files written under `root`.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: IndexMap<String, String>,
}

impl Outputs {
    pub fn write(&mut self, root: &Path, rel: &str, bytes: &[u8]) -> CliResult<()> {
        write_atomic(&root.join(rel), bytes)?;
        self.files.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::input(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Where the manifest for an output location lives: inside a directory,
/// or next to a single output file.
pub fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join(MANIFEST_NAME)
    } else {
        let mut p = out.as_os_str().to_owned();
        p.push(".manifest.json");
        PathBuf::from(p)
    }
}

pub fn read_manifest(path: &Path) -> CliResult<RunManifest> {
    let text = read_input_text(path)?;
    let m: RunManifest =
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    if m.format != MANIFEST_VERSION {
        return Err(CliError::input(format!(
            "unsupported manifest version {:?} (expected {MANIFEST_VERSION:?})",
            m.format
        )));
    }
    Ok(m)
}
