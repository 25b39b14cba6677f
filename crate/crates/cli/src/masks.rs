//! Mask library: PNGs with an alpha channel, or `<name>.png` paired with
//! `<name>_alpha.png`.

use std::fs;
use std::path::{Path, PathBuf};

use deocc_core::mask::MaskAsset;

use crate::error::{CliError, Result};
use crate::png;

pub const ALPHA_SUFFIX: &str = "_alpha";

fn pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads every mask in `dir`, sorted by id (file stem).
pub fn read_masks(dir: &Path) -> Result<Vec<MaskAsset>> {
    let files = pngs(dir)?;
    let mut masks = Vec::new();
    for path in &files {
        let id = stem(path);
        if id.ends_with(ALPHA_SUFFIX) {
            continue;
        }
        let (rgb, alpha) = png::read_with_alpha(path)?;
        let rgb = png::to_rgb(rgb).map_err(|_| CliError::Image {
            path: path.clone(),
            message: "mask color must be RGB or gray".into(),
        })?;
        let paired = dir.join(format!("{id}{ALPHA_SUFFIX}.png"));
        let alpha = if paired.is_file() {
            png::read(&paired)?
                .select_channels(&[0])
                .map_err(|e| CliError::data(&paired, e))?
        } else {
            alpha.ok_or_else(|| CliError::Image {
                path: path.clone(),
                message: format!("mask has no alpha channel and no {id}{ALPHA_SUFFIX}.png"),
            })?
        };
        masks.push(MaskAsset::new(id, rgb, alpha).map_err(|e| CliError::data(path, e))?);
    }
    if masks.is_empty() {
        return Err(CliError::Usage(format!(
            "no masks found in {}",
            dir.display()
        )));
    }
    Ok(masks)
}
