use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub params: serde_json::Value,
    /// Command line as invoked; `corrinit rerun` replays it.
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
    /// File names relative to the output directory.
    pub outputs: Vec<String>,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Runtime(format!("{}: not a run manifest: {e}", path.display())))
    }
}

/// Output files of one run, written in the order they are created.
pub struct Outputs {
    dir: PathBuf,
    names: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            names: Vec::new(),
        }
    }

    /// Writes `bytes` to `name` inside the output directory.
    pub fn write(&mut self, name: String, bytes: &[u8]) -> CliResult<()> {
        std::fs::write(self.dir.join(&name), bytes)?;
        self.names.push(name);
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.names.clone()
    }
}
