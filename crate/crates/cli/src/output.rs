//! Artifact files and the run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use pls::predictor::Factorization;
use pls::{Kernel, Likelihood, PlsError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const GIT_VERSION: &str = env!("PLS_GIT_VERSION");

/// Output directory that remembers which files it wrote.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn open(&mut self, name: &str) -> Result<BufWriter<File>> {
        let file = File::create(self.root.join(name))?;
        self.written.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.open(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(json_error)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    /// Hands a buffered writer to `f`, which owns flushing through its own
    /// CSV writer.
    pub fn with<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let mut w = self.open(name)?;
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}

pub fn json_error(e: serde_json::Error) -> PlsError {
    if e.is_io() {
        PlsError::Io(e.into())
    } else {
        PlsError::Input(format!("json: {e}"))
    }
}

#[derive(Debug, Serialize)]
pub struct DataSource {
    /// File path or synthetic generator name.
    pub source: String,
    pub rows: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub test_frac: Option<f64>,
}

/// Everything needed to reproduce a command.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub git_version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub params: &'a C,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<&'a Kernel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub likelihood: Option<Likelihood>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    pub factorization: Option<Factorization>,
    pub outputs: Vec<String>,
}

impl<'a, C: Serialize> Manifest<'a, C> {
    pub fn new(command: &'static str, seed: u64, params: &'a C) -> Self {
        Manifest {
            tool: "pls",
            version: VERSION,
            git_version: GIT_VERSION,
            command,
            seed,
            params,
            data: None,
            kernel: None,
            likelihood: None,
            step_size: None,
            factorization: None,
            outputs: Vec::new(),
        }
    }

    /// Records the files written so far and writes `manifest.json` last.
    pub fn write(mut self, out: &mut OutDir) -> Result<()> {
        self.outputs = out.written().to_vec();
        self.outputs.push("manifest.json".into());
        out.json("manifest.json", &self)
    }
}
