//! Staged output: every file of a command is written to a temporary sibling
//! first and renamed into place only once all of them were written.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ssm_core::RunManifest;
use tempfile::NamedTempFile;

#[derive(Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((path.into(), bytes.into()));
    }

    /// Adds `path` plus a `<path>.manifest.json` sidecar.
    pub fn add_with_sidecar(
        &mut self,
        path: &Path,
        bytes: impl Into<Vec<u8>>,
        manifest: &RunManifest,
    ) -> Result<()> {
        self.add(path, bytes);
        self.add(sidecar_path(path), manifest.to_json()?);
        Ok(())
    }

    /// Writes all staged files. On error nothing has been renamed into place
    /// and the temporaries are removed.
    pub fn commit(self) -> Result<()> {
        let mut staged = Vec::with_capacity(self.files.len());
        for (path, bytes) in &self.files {
            let dir = match path.parent() {
                Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
                _ => PathBuf::from("."),
            };
            fs::create_dir_all(&dir)
                .with_context(|| format!("creating directory {}", dir.display()))?;
            let mut tmp = NamedTempFile::new_in(&dir)
                .with_context(|| format!("staging {}", path.display()))?;
            tmp.write_all(bytes)
                .and_then(|_| tmp.as_file().sync_all())
                .with_context(|| format!("writing {}", path.display()))?;
            staged.push((tmp, path));
        }
        for (tmp, path) in staged {
            tmp.persist(path)
                .map_err(|e| e.error)
                .with_context(|| format!("renaming output into {}", path.display()))?;
        }
        Ok(())
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// Path text as given on the command line, with `/` separators.
pub fn display_path(path: &Path) -> String {
    path.to_string_lossy().replace('\\', "/")
}
