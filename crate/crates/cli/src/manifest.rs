use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fgn_core::io::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::failure::{CliError, Context};

/// Record of one command invocation. Written as `manifest.json` inside an
/// output directory, or as `<artifact>.manifest.json` next to a single
/// output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub master_seed: u64,
    /// Effective config after flag overrides.
    pub config: serde_json::Value,
    pub config_hash: String,
    /// Input file name → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the manifest → SHA-256.
    pub outputs: BTreeMap<String, String>,
    /// Non-deterministic side files (logs); not hashed.
    pub diagnostics: Vec<String>,
    /// Excluded from [`RunManifest::fingerprint`].
    pub wall_time_s: f64,
}

pub fn file_hash(path: &Path) -> Result<String, CliError> {
    Ok(sha256_hex(&fs::read(path).context(path.display())?))
}

fn name_of(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
    base: PathBuf,
}

impl ManifestBuilder {
    /// `base` is the directory output paths are recorded relative to.
    pub fn new(command: &str, master_seed: u64, config: &impl Serialize, base: &Path) -> Result<Self, CliError> {
        let config = serde_json::to_value(config)?;
        let config_hash = sha256_hex(serde_json::to_string(&config)?.as_bytes());
        Ok(Self {
            manifest: RunManifest {
                command: command.into(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                master_seed,
                config,
                config_hash,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                diagnostics: Vec::new(),
                wall_time_s: 0.0,
            },
            started: Instant::now(),
            base: base.to_path_buf(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let h = file_hash(path)?;
        self.manifest.inputs.insert(name_of(path), h);
        Ok(())
    }

    fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.base)
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_else(|_| path.display().to_string())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        let h = file_hash(path)?;
        let rel = self.relative(path);
        self.manifest.outputs.insert(rel, h);
        Ok(())
    }

    pub fn diagnostic(&mut self, path: &Path) {
        let rel = self.relative(path);
        self.manifest.diagnostics.push(rel);
    }

    pub fn write(mut self, path: &Path) -> Result<RunManifest, CliError> {
        self.manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).context(dir.display())?;
        }
        fs::write(path, serde_json::to_string_pretty(&self.manifest)? + "\n").context(path.display())?;
        Ok(self.manifest)
    }
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).context(path.display())?;
        serde_json::from_str(&text).context(path.display())
    }

    /// Hash of every field except the wall time.
    pub fn fingerprint(&self) -> String {
        let mut m = self.clone();
        m.wall_time_s = 0.0;
        sha256_hex(serde_json::to_string(&m).expect("manifest serializes").as_bytes())
    }
}

/// `<file>.manifest.json` next to a single-file output.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}
