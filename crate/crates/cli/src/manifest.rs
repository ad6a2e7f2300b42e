use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
struct Versions {
    epiqsim: &'static str,
    epiqsim_cli: &'static str,
}

/// Contents of `run_manifest.json`. No timestamps, so identical runs
/// produce identical bytes.
#[derive(Serialize)]
pub struct Manifest {
    subcommand: &'static str,
    config: Option<String>,
    config_sha256: Option<String>,
    seed: Option<u64>,
    family: Option<String>,
    versions: Versions,
    outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(subcommand: &'static str) -> Self {
        Self {
            subcommand,
            config: None,
            config_sha256: None,
            seed: None,
            family: None,
            versions: Versions {
                epiqsim: epiqsim::VERSION,
                epiqsim_cli: env!("CARGO_PKG_VERSION"),
            },
            outputs: Vec::new(),
        }
    }

    pub fn config(mut self, path: &Path) -> anyhow::Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.config = Some(path.display().to_string());
        self.config_sha256 = Some(sha256_hex(&bytes));
        Ok(self)
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn family(mut self, family: &str) -> Self {
        self.family = Some(family.to_string());
        self
    }

    pub fn output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        write_file(&dir.join("run_manifest.json"), text + "\n")
    }
}

pub fn prepare_dir(dir: &Path) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
