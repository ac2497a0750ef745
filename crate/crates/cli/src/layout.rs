//! Artifact directory layout and the per-invocation run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, RunConfig};
use crate::error::CliError;

/// `<out>/runs/<run-id>/{checkpoints,images,reports,manifests}`.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub out: PathBuf,
    pub run_id: String,
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(out: &Path, cfg: &RunConfig) -> Self {
        let run_id = cfg.run_id();
        Self {
            out: out.to_path_buf(),
            root: out.join("runs").join(&run_id),
            run_id,
        }
    }

    pub fn create(&self) -> Result<(), CliError> {
        for d in [self.checkpoints(), self.images(), self.reports(), self.manifests()] {
            std::fs::create_dir_all(&d)
                .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", d.display())))?;
        }
        Ok(())
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn images(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn manifests(&self) -> PathBuf {
        self.root.join("manifests")
    }

    pub fn tokenizer_dir(&self) -> PathBuf {
        self.checkpoints().join("tokenizer")
    }

    pub fn var_dir(&self) -> PathBuf {
        self.checkpoints().join("var")
    }

    pub fn normalizer_path(&self) -> PathBuf {
        self.checkpoints().join("measurement_normalizer.csv")
    }

    /// Dataset directory (shared by all runs under `out`).
    pub fn data_dir(&self, cfg: &RunConfig) -> PathBuf {
        if cfg.data.dir.is_absolute() {
            cfg.data.dir.clone()
        } else {
            self.out.join(&cfg.data.dir)
        }
    }

    /// Path relative to `out` when possible, for manifests that do not
    /// depend on where the output directory lives.
    pub fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.out).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }
}

/// What one subcommand invocation consumed and produced. Contains no
/// timestamps or absolute paths under the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub subcommand: String,
    pub seed: u64,
    /// Input files and their SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub checkpoints: Vec<String>,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(layout: &RunLayout, cfg: &RunConfig, subcommand: &str) -> Self {
        Self {
            run_id: layout.run_id.clone(),
            config_hash: cfg.config_hash(),
            subcommand: subcommand.to_string(),
            seed: cfg.seed,
            inputs: BTreeMap::new(),
            checkpoints: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn add_input(&mut self, layout: &RunLayout, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        self.inputs.insert(layout.relative(path), sha256_hex(&bytes));
        Ok(())
    }

    pub fn add_checkpoint(&mut self, layout: &RunLayout, path: &Path) {
        self.checkpoints.push(layout.relative(path));
    }

    pub fn add_artifact(&mut self, layout: &RunLayout, path: &Path) {
        self.artifacts.push(layout.relative(path));
    }

    pub fn write(&self, layout: &RunLayout) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(layout.manifests())?;
        let path = layout.manifests().join(format!("{}.json", self.subcommand));
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}
