//! Run directories: result files plus a manifest that records the exact
//! configuration and whether the run finished.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Incomplete,
    Complete,
}

#[derive(Debug, Serialize)]
struct Versions {
    scol: &'static str,
    fixed_point_base: u64,
    fixed_point_digits: u32,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    config_hash: String,
    seeds: &'a [u64],
    scale: f64,
    data_dir: Option<String>,
    outputs: &'a [String],
    versions: Versions,
    config: &'a ExperimentConfig,
}

/// An output directory being filled by one command.
pub struct RunDir<'a> {
    dir: PathBuf,
    command: &'a str,
    config: &'a ExperimentConfig,
    data_dir: Option<PathBuf>,
    outputs: Vec<String>,
}

impl<'a> RunDir<'a> {
    /// Creates the directory and marks it incomplete.
    pub fn create(command: &'a str, config: &'a ExperimentConfig, data_dir: Option<PathBuf>) -> Result<Self> {
        let dir = config.out_dir.clone();
        std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        let run = RunDir {
            dir,
            command,
            config,
            data_dir,
            outputs: Vec::new(),
        };
        run.write_manifest(Status::Incomplete, None)?;
        Ok(run)
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Writes `name`, replacing any earlier version.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(CliError::io(parent))?;
        }
        std::fs::write(&path, contents).map_err(CliError::io(&path))?;
        self.record(name);
        Ok(())
    }

    /// Notes a file written by someone else.
    pub fn record(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
    }

    pub fn finish(self) -> Result<()> {
        self.write_manifest(Status::Complete, None)
    }

    /// Leaves the manifest incomplete with the error that stopped the run.
    pub fn fail(self, err: &CliError) -> Result<()> {
        self.write_manifest(Status::Incomplete, Some(err.to_string()))
    }

    fn write_manifest(&self, status: Status, error: Option<String>) -> Result<()> {
        let codec = scol_mpc::FixedPointCodec::new(10, self.config.scenario.frac_digits)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let m = Manifest {
            command: self.command,
            status,
            error,
            config_hash: self.config.hash()?,
            seeds: &self.config.seeds,
            scale: self.config.effective_scale(),
            data_dir: self.data_dir.as_ref().map(|d| d.display().to_string()),
            outputs: &self.outputs,
            versions: Versions {
                scol: env!("CARGO_PKG_VERSION"),
                fixed_point_base: codec.base(),
                fixed_point_digits: codec.frac_digits(),
            },
            config: self.config,
        };
        let text = toml::to_string(&m).map_err(|e| CliError::Config(e.to_string()))?;
        let path = self.dir.join(MANIFEST);
        std::fs::write(&path, text).map_err(CliError::io(&path))
    }
}
