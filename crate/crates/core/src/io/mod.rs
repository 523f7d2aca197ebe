//! On-disk formats: checkpoints, preferred-space files and run configs.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, CheckpointKind, Section, CHECKPOINT_VERSION, MAGIC};
pub use config::{EvalSection, RunConfig, SelectSection, TrainSection, RUN_CONFIG_VERSION};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::archspace::SearchSpaceSpec;
use crate::selector::{PreferredSpace, PREFERRED_SPACE_VERSION};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {err}")]
    Io { path: PathBuf, err: std::io::Error },
    #[error("{0}")]
    Format(String),
    #[error("format version {found} is not supported (this build reads {supported})")]
    Version { found: u32, supported: u32 },
    #[error("spec hash mismatch: the space hashes to {expected}, the file was written for {found}")]
    SpecMismatch { expected: String, found: String },
    #[error("{0}")]
    Config(String),
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|err| IoError::Io { path: path.to_path_buf(), err })
}

/// Writes through a sibling temporary file so readers never see a partial file.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let wrap = |err| IoError::Io { path: path.to_path_buf(), err };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(wrap)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes).map_err(wrap)?;
    std::fs::rename(&tmp, path).map_err(wrap)
}

pub fn preferred_to_json(ps: &PreferredSpace) -> String {
    let mut s = serde_json::to_string_pretty(ps).expect("preferred space serializes");
    s.push('\n');
    s
}

/// Parses a preferred-space file and checks it was selected from `spec`.
pub fn preferred_from_json(text: &str, spec: &SearchSpaceSpec) -> Result<PreferredSpace, IoError> {
    let ps: PreferredSpace =
        serde_json::from_str(text).map_err(|e| IoError::Format(format!("preferred space: {e}")))?;
    if ps.version != PREFERRED_SPACE_VERSION {
        return Err(IoError::Version { found: ps.version, supported: PREFERRED_SPACE_VERSION });
    }
    let want = spec.hash().to_hex();
    if ps.provenance.spec_hash != want {
        return Err(IoError::SpecMismatch { expected: want, found: ps.provenance.spec_hash });
    }
    Ok(ps)
}

#[cfg(test)]
mod tests;
