//! Artifact files: JSON payloads wrapped with a run manifest, NDJSON
//! sidecars, CSV and PGM writers.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

/// Provenance embedded in every artifact: the configuration hash, the
/// seed and the crate version that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub stage: String,
}

impl Manifest {
    pub fn new(config: &RunConfig, stage: &str) -> Manifest {
        Manifest {
            config_hash: format!("{:016x}", config.config_hash),
            seed: config.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            stage: stage.to_string(),
        }
    }
}

#[derive(Serialize, Deserialize)]
pub struct Artifact<T> {
    pub manifest: Manifest,
    #[serde(flatten)]
    pub payload: T,
}

pub fn write_json<T: Serialize>(path: &Path, manifest: Manifest, payload: T) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| stage_io(path, e))?;
    }
    let artifact = Artifact { manifest, payload };
    let json = serde_json::to_string_pretty(&artifact)
        .map_err(|e| CliError::stage("serialize", e.to_string()))?;
    std::fs::write(path, json).map_err(|e| stage_io(path, e))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Artifact<T>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| stage_io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::stage("load", format!("{}: {e}", path.display())))
}

fn stage_io(path: &Path, e: std::io::Error) -> CliError {
    CliError::stage("io", format!("{}: {e}", path.display()))
}

/// CSV with a manifest comment header.
pub fn write_csv(
    path: &Path,
    manifest: &Manifest,
    header: &str,
    rows: impl Iterator<Item = String>,
) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| stage_io(path, e))?;
    }
    let mut out = format!(
        "# config_hash={} seed={} version={} stage={}\n{header}\n",
        manifest.config_hash, manifest.seed, manifest.version, manifest.stage
    );
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| stage_io(path, e))?;
    Ok(())
}

/// Plain-text report with a manifest comment header.
pub fn write_text(path: &Path, manifest: &Manifest, body: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| stage_io(path, e))?;
    }
    let out = format!(
        "# config_hash={} seed={} version={} stage={}\n{body}",
        manifest.config_hash, manifest.seed, manifest.version, manifest.stage
    );
    std::fs::write(path, out).map_err(|e| stage_io(path, e))?;
    Ok(())
}

/// ASCII PGM (P2) mask: 0 background, 255 highlighted.
pub fn write_pgm_mask(
    path: &Path,
    rows: usize,
    cols: usize,
    highlighted: &[(usize, usize)],
) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| stage_io(path, e))?;
    }
    let mut grid = vec![0u8; rows * cols];
    for &(r, c) in highlighted {
        if r < rows && c < cols {
            grid[r * cols + c] = 255;
        }
    }
    let mut out = format!("P2\n{cols} {rows}\n255\n");
    for r in 0..rows {
        let line: Vec<String> = (0..cols).map(|c| grid[r * cols + c].to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| stage_io(path, e))?;
    Ok(())
}
