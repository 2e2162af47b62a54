//! Run manifests: one JSON record per command invocation, written
//! atomically when the run completes.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use serde::Serialize;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub duration_seconds: f64,
}

/// Where the manifest goes: inside an artifact directory, or next to a
/// single-file artifact as `<file>.manifest.json`.
pub enum ManifestHome {
    Dir(PathBuf),
    Beside(PathBuf),
}

pub struct RunRecord {
    pub home: ManifestHome,
    pub manifest: RunManifest,
}

impl RunRecord {
    pub fn new(
        command: &str,
        home: ManifestHome,
        config: serde_json::Value,
        inputs: &[&Path],
        outputs: &[&Path],
        seed: Option<u64>,
    ) -> Self {
        Self {
            home,
            manifest: RunManifest {
                command: command.to_string(),
                config,
                inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
                outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
                seed,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                duration_seconds: 0.0,
            },
        }
    }

    /// Write the manifest via a temp file + rename.
    pub fn finalize(mut self, elapsed: Duration) -> anyhow::Result<()> {
        self.manifest.duration_seconds = elapsed.as_secs_f64();
        let path = match &self.home {
            ManifestHome::Dir(dir) => dir.join("manifest.json"),
            ManifestHome::Beside(file) => {
                let mut name = file
                    .file_name()
                    .context("artifact path has no file name")?
                    .to_os_string();
                name.push(".manifest.json");
                file.with_file_name(name)
            }
        };
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_vec_pretty(&self.manifest)?;
        std::fs::write(&tmp, body)
            .with_context(|| format!("writing manifest to {}", tmp.display()))?;
        std::fs::rename(&tmp, &path)
            .with_context(|| format!("renaming manifest into {}", path.display()))?;
        Ok(())
    }
}
