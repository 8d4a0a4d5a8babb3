//! Run manifests: config echo, input/output digests, timings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use serde::Serialize;

/// FNV-1a 64 over the file bytes, hex-encoded.
pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    Ok(format!("{hash:016x}"))
}

#[derive(Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_secs: BTreeMap<String, f64>,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    stage_started: Option<(String, Instant)>,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            manifest: RunManifest {
                tool_version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                config,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                wall_clock_secs: BTreeMap::new(),
            },
            stage_started: None,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest
            .inputs
            .insert(path.display().to_string(), digest_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.manifest
            .outputs
            .insert(path.display().to_string(), digest_file(path)?);
        Ok(())
    }

    pub fn stage(&mut self, name: &str) {
        self.finish_stage();
        self.stage_started = Some((name.to_string(), Instant::now()));
    }

    fn finish_stage(&mut self) {
        if let Some((name, started)) = self.stage_started.take() {
            self.manifest
                .wall_clock_secs
                .insert(name, started.elapsed().as_secs_f64());
        }
    }

    /// Re-digests every input before writing: commands must never mutate
    /// their input files.
    pub fn write(mut self, dir: &Path) -> Result<PathBuf> {
        self.finish_stage();
        for (path, recorded) in &self.manifest.inputs {
            let now = digest_file(Path::new(path))?;
            if &now != recorded {
                anyhow::bail!("input `{path}` changed during the run");
            }
        }
        let path = dir.join("manifest.json");
        let file = std::fs::File::create(&path)?;
        serde_json::to_writer_pretty(file, &self.manifest)?;
        Ok(path)
    }
}
