//! JSON-lines dataset manifests.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::shapes::{Pose, ShapeClass, ShapeSpec};

/// One scan pair. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub class: ShapeClass,
    pub partial_path: PathBuf,
    pub complete_path: PathBuf,
    pub pose: Pose,
    /// Shape size and view, enough to regenerate further scans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_dir: Option<[f64; 3]>,
}

impl ManifestRecord {
    pub fn shape(&self) -> Option<ShapeSpec> {
        Some(ShapeSpec {
            class: self.class,
            size: self.size?,
            pose: self.pose,
        })
    }
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::input(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let input = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?);
    }
    Ok(out)
}

/// Resolves a record path against the manifest location.
pub fn resolve(manifest: &Path, relative: &Path) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(relative)
}
