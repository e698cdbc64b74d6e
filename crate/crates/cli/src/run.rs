//! Run directories, manifests and exit-code classification.

use anyhow::Context;
use chrono::{DateTime, Utc};
use geomesh_core::models::ModelError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILED_MARKER: &str = ".failed";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0:#}")]
    Data(anyhow::Error),
    #[error("{0:#}")]
    Numerical(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(err: anyhow::Error) -> Self {
        if let Some(cli) = err.downcast_ref::<CliError>() {
            return match cli {
                CliError::Usage(m) => CliError::Usage(m.clone()),
                CliError::Data(_) => CliError::Data(err),
                CliError::Numerical(_) => CliError::Numerical(err),
            };
        }
        let numerical = err.chain().any(|cause| {
            matches!(cause.downcast_ref::<ModelError>(), Some(ModelError::Divergence { .. }))
        });
        if numerical {
            CliError::Numerical(err)
        } else {
            CliError::Data(err)
        }
    }
}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    CliError::Usage(msg.into()).into()
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, enough to replay the run.
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    /// Output files relative to the run directory.
    pub outputs: Vec<FileDigest>,
    pub toolkit_version: String,
    pub started_utc: String,
    pub wall_clock_secs: f64,
    pub warnings: Vec<String>,
}

/// Output directory created on first use, so runs that fail before writing
/// anything leave nothing behind.
#[derive(Debug)]
pub struct RunDir {
    base: PathBuf,
    name: String,
    path: Option<PathBuf>,
    outputs: Vec<String>,
    inputs: Vec<FileDigest>,
    pub warnings: Vec<String>,
    pub config: serde_json::Value,
    started: DateTime<Utc>,
    clock: Instant,
}

impl RunDir {
    /// `fingerprint` feeds the short checksum in the directory name.
    pub fn new(base: &Path, fingerprint: &str) -> Self {
        let started = Utc::now();
        let short = &hex::encode(Sha256::digest(fingerprint.as_bytes()))[..8];
        Self {
            base: base.to_path_buf(),
            name: format!("{}-{short}", started.format("%Y%m%dT%H%M%SZ")),
            path: None,
            outputs: Vec::new(),
            inputs: Vec::new(),
            warnings: Vec::new(),
            config: serde_json::Value::Null,
            started,
            clock: Instant::now(),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn ensure(&mut self) -> anyhow::Result<PathBuf> {
        if let Some(p) = &self.path {
            return Ok(p.clone());
        }
        std::fs::create_dir_all(&self.base).with_context(|| format!("creating {}", self.base.display()))?;
        let mut candidate = self.base.join(&self.name);
        let mut n = 1;
        while candidate.exists() {
            candidate = self.base.join(format!("{}-{n}", self.name));
            n += 1;
        }
        std::fs::create_dir(&candidate).with_context(|| format!("creating {}", candidate.display()))?;
        self.path = Some(candidate.clone());
        Ok(candidate)
    }

    /// Path for a new output file, registered for the manifest.
    pub fn output(&mut self, file: &str) -> anyhow::Result<PathBuf> {
        let dir = self.ensure()?;
        self.outputs.push(file.to_string());
        Ok(dir.join(file))
    }

    pub fn write_json<T: Serialize>(&mut self, file: &str, value: &T) -> anyhow::Result<()> {
        let path = self.output(file)?;
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_text(&mut self, file: &str, text: &str) -> anyhow::Result<()> {
        let path = self.output(file)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn finish(&mut self, command: &str, argv: Vec<String>, seed: Option<u64>) -> anyhow::Result<PathBuf> {
        let dir = self.ensure()?;
        let outputs = self
            .outputs
            .iter()
            .map(|f| {
                Ok(FileDigest {
                    path: f.clone(),
                    sha256: sha256_file(&dir.join(f))?,
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let manifest = RunManifest {
            command: command.to_string(),
            argv,
            seed,
            config: std::mem::take(&mut self.config),
            inputs: std::mem::take(&mut self.inputs),
            outputs,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            started_utc: self.started.to_rfc3339(),
            wall_clock_secs: self.clock.elapsed().as_secs_f64(),
            warnings: std::mem::take(&mut self.warnings),
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(dir)
    }

    /// Marks a partially written run; a no-op when nothing was written.
    pub fn fail(&self, err: &CliError) {
        if let Some(dir) = &self.path {
            let _ = std::fs::write(dir.join(FAILED_MARKER), format!("{err}\n"));
        }
    }
}

pub fn read_manifest(dir: &Path) -> anyhow::Result<RunManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    Ok(serde_json::from_str(&text)?)
}
