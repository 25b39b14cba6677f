//! Light-field directory format: `manifest.json` plus one PNG per view.

use std::fs;
use std::path::Path;

use deocc_core::{AngularCoord, LightField};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::png;

pub const MANIFEST: &str = "manifest.json";
pub const DEFAULT_VIEW_PATTERN: &str = "view_{row:02}_{col:02}.png";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub angular_rows: usize,
    pub angular_cols: usize,
    #[serde(default = "default_pattern")]
    pub view_pattern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rectified_disparity: Option<f64>,
}

fn default_pattern() -> String {
    DEFAULT_VIEW_PATTERN.into()
}

impl Manifest {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            angular_rows: rows,
            angular_cols: cols,
            view_pattern: default_pattern(),
            baseline_mm: None,
            rectified_disparity: None,
        }
    }
}

/// Expands `{row}`, `{col}` and zero-padded `{row:0N}` / `{col:0N}` fields.
pub fn view_filename(pattern: &str, coord: AngularCoord) -> Result<String> {
    let mut out = String::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let close = rest[open..].find('}').map(|c| open + c).ok_or_else(|| {
            CliError::Usage(format!("unclosed field in view pattern `{pattern}`"))
        })?;
        let field = &rest[open + 1..close];
        let (name, spec) = field.split_once(':').unwrap_or((field, ""));
        let value = match name {
            "row" => coord.row,
            "col" => coord.col,
            _ => {
                return Err(CliError::Usage(format!(
                    "unknown field `{name}` in view pattern `{pattern}`"
                )))
            }
        };
        let width = match spec {
            "" => 0,
            s if s.starts_with('0') => s[1..].parse::<usize>().map_err(|_| {
                CliError::Usage(format!("bad width `{s}` in view pattern `{pattern}`"))
            })?,
            s => {
                return Err(CliError::Usage(format!(
                    "bad width `{s}` in view pattern `{pattern}`"
                )))
            }
        };
        out.push_str(&format!("{value:0width$}"));
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::json(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn is_lf_dir(dir: &Path) -> bool {
    dir.join(MANIFEST).is_file()
}

/// Reads every view as RGB; gray views are expanded.
pub fn read_lf(dir: &Path) -> Result<(LightField, Manifest)> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
    let (rows, cols) = (manifest.angular_rows, manifest.angular_cols);
    let mut views = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            let path = dir.join(view_filename(
                &manifest.view_pattern,
                AngularCoord { row, col },
            )?);
            views.push(png::read_rgb(&path)?);
        }
    }
    let lf = LightField::new(rows, cols, views).map_err(|e| CliError::data(dir, e))?;
    Ok((lf, manifest))
}

pub fn write_lf(dir: &Path, lf: &LightField, manifest: &Manifest) -> Result<()> {
    if (manifest.angular_rows, manifest.angular_cols) != (lf.rows(), lf.cols()) {
        return Err(CliError::data(
            dir,
            deocc_core::Error::InvalidArgument(
                "manifest grid does not match the light field".into(),
            ),
        ));
    }
    create_dir(dir)?;
    write_json(&dir.join(MANIFEST), manifest)?;
    for c in lf.coords() {
        png::write(
            &dir.join(view_filename(&manifest.view_pattern, c)?),
            lf.view(c),
        )?;
    }
    Ok(())
}

/// Directories under `root` holding a light field, sorted by name; `root`
/// itself when it is one.
pub fn lf_dirs(root: &Path) -> Result<Vec<std::path::PathBuf>> {
    if is_lf_dir(root) {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<_> = fs::read_dir(root)
        .map_err(|e| CliError::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_lf_dir(p))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::io(
            root.join(MANIFEST),
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "no light-field manifest found",
            ),
        ));
    }
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use deocc_core::Image;

    #[test]
    fn pattern_expansion() {
        let c = AngularCoord { row: 3, col: 12 };
        assert_eq!(
            view_filename(DEFAULT_VIEW_PATTERN, c).unwrap(),
            "view_03_12.png"
        );
        assert_eq!(
            view_filename("{col}-{row:03}.png", c).unwrap(),
            "12-003.png"
        );
        assert!(view_filename("{depth}.png", c).is_err());
        assert!(view_filename("{row", c).is_err());
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let lf = LightField::from_fn(2, 3, |c| {
            Image::from_fn(4, 5, 3, move |ch, y, x| {
                ((ch + y + x + c.row * 3 + c.col) % 9) as f32 * 17.0 / 255.0
            })
        })
        .unwrap();
        let mut m = Manifest::new(2, 3);
        m.rectified_disparity = Some(-0.5);
        write_lf(dir.path(), &lf, &m).unwrap();
        let (back, m2) = read_lf(dir.path()).unwrap();
        assert_eq!(back, lf);
        assert_eq!(m2, m);
    }

    #[test]
    fn missing_manifest_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let e = read_lf(dir.path()).unwrap_err();
        assert!(e.to_string().contains(MANIFEST));
    }

    #[test]
    fn manifest_defaults_pattern() {
        let m: Manifest =
            serde_json::from_str(r#"{"angular_rows": 5, "angular_cols": 15}"#).unwrap();
        assert_eq!(m.view_pattern, DEFAULT_VIEW_PATTERN);
        assert_eq!(m.rectified_disparity, None);
    }
}
