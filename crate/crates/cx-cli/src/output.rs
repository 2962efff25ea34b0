//! Output directory contract: every run writes its results next to a
//! config snapshot (with the resolved seed) and the tool version, and a
//! rerun from the snapshot reproduces the results byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cx_core::error::Result;

use crate::args::Command;

pub const SNAPSHOT_FILE: &str = "run_config.json";
pub const VERSION_FILE: &str = "version.txt";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub tool_version: String,
    pub seed: u64,
    pub workers: usize,
    #[serde(flatten)]
    pub command: Command,
}

pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    /// Create the directory and write the snapshot + version marker.
    pub fn prepare(path: &Path, snapshot: &RunSnapshot) -> Result<Self> {
        fs::create_dir_all(path)?;
        let json = serde_json::to_string_pretty(snapshot)?;
        fs::write(path.join(SNAPSHOT_FILE), json + "\n")?;
        fs::write(
            path.join(VERSION_FILE),
            concat!(env!("CARGO_PKG_VERSION"), "\n"),
        )?;
        Ok(OutputDir {
            root: path.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let json = serde_json::to_string_pretty(value)?;
        fs::write(self.root.join(name), json + "\n")?;
        Ok(())
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        fs::write(self.root.join(name), text)?;
        Ok(())
    }
}

pub fn read_snapshot(path: &Path) -> Result<RunSnapshot> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
