use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Record of one run: enough to reproduce every output file.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub flags: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub library_version: String,
    pub input_hashes: BTreeMap<String, String>,
    pub output_hashes: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub jobs: usize,
    pub wall_clock_seconds: f64,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, serde_json::Value>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct ManifestBuilder {
    started: Instant,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, flags: &impl Serialize) -> Self {
        Self {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                flags: serde_json::to_value(flags).expect("flags serialize"),
                seeds: BTreeMap::new(),
                library_version: env!("CARGO_PKG_VERSION").to_string(),
                input_hashes: BTreeMap::new(),
                output_hashes: BTreeMap::new(),
                outputs: Vec::new(),
                jobs: rayon::current_num_threads(),
                wall_clock_seconds: 0.0,
                notes: BTreeMap::new(),
            },
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seeds.insert(name.to_string(), value);
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let h = sha256_file(path)?;
        self.manifest.input_hashes.insert(path.display().to_string(), h);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        let h = sha256_file(path)?;
        self.manifest.output_hashes.insert(path.display().to_string(), h);
        self.manifest.outputs.push(path.display().to_string());
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.manifest.notes.insert(key.to_string(), serde_json::to_value(value).expect("note serializes"));
    }

    /// Writes the manifest to `path`, or to stderr when there is no path.
    pub fn finish(mut self, path: Option<&Path>) -> Result<RunManifest, CliError> {
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest)?;
        match path {
            Some(p) => std::fs::write(p, text + "\n")?,
            None => eprintln!("{text}"),
        }
        Ok(self.manifest)
    }
}

/// `--manifest` if given, else `<primary output>.manifest.json`.
pub fn manifest_path(explicit: Option<&Path>, primary: Option<&Path>) -> Option<PathBuf> {
    explicit.map(Path::to_path_buf).or_else(|| {
        primary.map(|p| {
            let mut s = p.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    })
}
