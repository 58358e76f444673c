//! Run manifests and atomic output staging.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use telegraph::hmm::MODEL_FORMAT;
use telegraph::simulate::{CLICK_FORMAT, RNG_ALGORITHM};

use crate::config::RunConfig;

/// Key whose presence marks a file as a manifest rather than a plain config.
pub const MANIFEST_KEY: &str = "telegraph_manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const TRAJECTORY_FORMAT: &str = "#trajectory v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Formats {
    pub clicks: String,
    pub trajectory: String,
    pub hmm_model: String,
    pub csv: String,
}

impl Default for Formats {
    fn default() -> Self {
        Self {
            clicks: CLICK_FORMAT.into(),
            trajectory: TRAJECTORY_FORMAT.into(),
            hmm_model: MODEL_FORMAT.into(),
            csv: "comma-separated, one header line, '#' comment lines".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub telegraph_manifest: u32,
    pub toolkit: String,
    pub subcommand: String,
    pub rng: String,
    /// Output files relative to the output directory, sorted.
    pub files: Vec<String>,
    pub formats: Formats,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(subcommand: &str, config: &RunConfig, files: Vec<String>) -> Self {
        Self {
            telegraph_manifest: MANIFEST_VERSION,
            toolkit: format!("telegraph {}", env!("CARGO_PKG_VERSION")),
            subcommand: subcommand.into(),
            rng: RNG_ALGORITHM.into(),
            files,
            formats: Formats::default(),
            config: config.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(toml::from_str(&text)?)
    }
}

/// Output files held in memory until every step of a run has succeeded.
#[derive(Debug, Default)]
pub struct Staged {
    files: Vec<(String, Vec<u8>)>,
}

impl Staged {
    pub fn add(&mut self, rel: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((rel.into(), bytes));
    }

    /// Renders a file through a writer callback.
    pub fn add_with<F>(&mut self, rel: impl Into<String>, f: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.add(rel, buf);
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.files.iter().map(|f| f.0.clone()).collect();
        v.sort();
        v
    }

    /// Writes every file plus the manifest with write-then-rename.
    pub fn commit(mut self, out: &Path, subcommand: &str, config: &RunConfig) -> Result<Vec<PathBuf>> {
        let mut seen = std::collections::BTreeSet::new();
        for (name, _) in &self.files {
            if !seen.insert(name.clone()) {
                bail!("internal: output {name} staged twice");
            }
        }
        let manifest = Manifest::new(subcommand, config, self.names());
        let text = toml::to_string(&manifest)?;
        self.files.push((MANIFEST_FILE.into(), text.into_bytes()));
        let mut written = Vec::with_capacity(self.files.len());
        for (rel, bytes) in &self.files {
            let path = out.join(rel);
            write_atomic(&path, bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}
