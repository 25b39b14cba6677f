//! Synthesized sample folders: an occluded light field in directory format
//! plus `gt.png` and `layers.json`.

use std::fs;
use std::path::{Path, PathBuf};

use deocc_core::mask::{LayerRecord, Synthesized};
use deocc_core::train::Sample;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::lfdir::{self, Manifest};
use crate::png;

pub const GT_FILE: &str = "gt.png";
pub const LAYERS_FILE: &str = "layers.json";

/// Contents of `layers.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub index: u64,
    pub source: String,
    pub seed: u64,
    pub layers: Vec<LayerRecord>,
    pub permutation: Option<[usize; 3]>,
    pub occlusion_rate: f64,
}

pub fn sample_dir_name(index: u64) -> String {
    format!("sample_{index:05}")
}

pub fn write_sample(
    dir: &Path,
    s: &Synthesized,
    meta: &SampleMeta,
    manifest: &Manifest,
) -> Result<()> {
    lfdir::write_lf(dir, &s.occluded, manifest)?;
    png::write(&dir.join(GT_FILE), &s.gt)?;
    lfdir::write_json(&dir.join(LAYERS_FILE), meta)
}

pub fn read_sample(dir: &Path) -> Result<Sample> {
    let (lf, _) = lfdir::read_lf(dir)?;
    let gt = png::read_rgb(&dir.join(GT_FILE))?;
    Ok(Sample { lf, gt })
}

pub fn read_meta(dir: &Path) -> Result<SampleMeta> {
    lfdir::read_json(&dir.join(LAYERS_FILE))
}

/// Sample folders under `root` (folders with a manifest and `gt.png`), sorted.
pub fn sample_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<_> = fs::read_dir(root)
        .map_err(|e| CliError::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| lfdir::is_lf_dir(p) && p.join(GT_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Usage(format!(
            "no samples found in {}",
            root.display()
        )));
    }
    Ok(dirs)
}

pub fn read_samples(root: &Path) -> Result<Vec<Sample>> {
    sample_dirs(root)?.iter().map(|d| read_sample(d)).collect()
}
