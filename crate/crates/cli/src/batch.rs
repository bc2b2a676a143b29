//! Timestamped, immutable batch directories and atomic file writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};

use crate::error::{CliError, Result};

/// Directory name `YYYYMMDDTHHMMSSZ-NNNN`: UTC creation time plus a suffix
/// that increases within the same second, so names sort chronologically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct BatchId(String);

impl BatchId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Accepts an existing id; rejects anything that could escape the
    /// output root.
    pub fn parse(s: &str) -> Result<Self> {
        let ok = !s.is_empty()
            && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
            && !s.starts_with('-');
        if ok {
            Ok(Self(s.to_owned()))
        } else {
            Err(CliError::Config(format!("invalid batch id {s:?}")))
        }
    }
}

impl std::fmt::Display for BatchId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub struct Batch {
    pub id: BatchId,
    pub dir: PathBuf,
}

impl Batch {
    /// Creates a fresh batch directory under `root`.
    pub fn create(root: &Path) -> Result<Self> {
        Self::create_at(root, Utc::now())
    }

    pub fn create_at(root: &Path, now: DateTime<Utc>) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::at(root, e))?;
        let stamp = now.format("%Y%m%dT%H%M%SZ").to_string();
        let mut next = std::fs::read_dir(root)
            .map_err(|e| CliError::at(root, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let suffix = name.strip_prefix(&stamp)?.strip_prefix('-')?;
                suffix.parse::<u32>().ok()
            })
            .max()
            .map_or(1, |m| m + 1);
        loop {
            let id = BatchId(format!("{stamp}-{next:04}"));
            let dir = root.join(id.as_str());
            match std::fs::create_dir(&dir) {
                Ok(()) => return Ok(Self { id, dir }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => next += 1,
                Err(e) => return Err(CliError::at(&dir, e)),
            }
        }
    }

    /// An existing batch under `root`.
    pub fn open(root: &Path, id: &str) -> Result<Self> {
        let id = BatchId::parse(id)?;
        let dir = root.join(id.as_str());
        if !dir.is_dir() {
            return Err(CliError::Data(format!("batch {} not found under {}", id, root.display())));
        }
        Ok(Self { id, dir })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(name), bytes)
    }

    pub fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(CliError::data)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::at(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::at(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::at(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::at(path, e))?;
    tmp.persist(path).map_err(|e| CliError::at(path, e.error))?;
    Ok(())
}
