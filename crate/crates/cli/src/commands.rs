//! Subcommand implementations, callable without the argument parser.

use std::path::{Path, PathBuf};

use deocc_core::lightfield::{rectify, stack_channels};
use deocc_core::mask::{sample_seed, synthesize_sample, MaskShuffle, SynthesisConfig};
use deocc_core::metrics::{assemble_report, evaluate_scene, EvalReport};
use deocc_core::model::{DeOccNet, NetworkConfig};
use deocc_core::nn::Tensor;
use deocc_core::refocus::{refocus, sharpness, sweep, Method};
use deocc_core::train::{self, restore_checkpoint, Progress, TrainConfig, TrainingLog};
use deocc_core::{Disparity, Image, LightField};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, SampleMeta};
use crate::error::{CliError, Result};
use crate::lfdir::{self, Manifest};
use crate::{masks, png, weights};

// ---- synthesize ----

#[derive(Debug, Clone)]
pub struct SynthesizeOptions {
    pub lf_dir: PathBuf,
    pub mask_dir: PathBuf,
    pub out: PathBuf,
    pub count: u64,
    pub config: SynthesisConfig,
}

/// Record of a synthesis run, written as `synthesis.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRun {
    pub config: SynthesisConfig,
    pub sources: Vec<String>,
    pub masks: Vec<String>,
    pub count: u64,
}

fn dir_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

/// Reads a light field and brings it to zero disparity at its manifest's
/// `rectified_disparity`.
pub fn read_rectified(dir: &Path, override_d: Option<f64>) -> Result<(LightField, Manifest)> {
    let (lf, manifest) = lfdir::read_lf(dir)?;
    let d0 = override_d.or(manifest.rectified_disparity).unwrap_or(0.0);
    if d0 == 0.0 {
        return Ok((lf, manifest));
    }
    let d = Disparity::new(d0).map_err(|e| CliError::data(dir, e))?;
    let lf = rectify(&lf, d).map_err(|e| CliError::data(dir, e))?;
    Ok((lf, manifest))
}

pub fn cmd_synthesize(o: &SynthesizeOptions) -> Result<Vec<PathBuf>> {
    o.config.validate()?;
    let dirs = lfdir::lf_dirs(&o.lf_dir)?;
    let mut sources = Vec::with_capacity(dirs.len());
    let mut manifests = Vec::with_capacity(dirs.len());
    for d in &dirs {
        let (lf, m) = read_rectified(d, None)?;
        sources.push(lf);
        manifests.push(m);
    }
    let mask_set = masks::read_masks(&o.mask_dir)?;
    lfdir::create_dir(&o.out)?;
    let mut written = Vec::with_capacity(o.count as usize);
    for i in 0..o.count {
        let (src, s) = synthesize_sample(&sources, &mask_set, &o.config, i)
            .map_err(|e| CliError::data(&dirs[0], e))?;
        let manifest = Manifest {
            rectified_disparity: None,
            view_pattern: lfdir::DEFAULT_VIEW_PATTERN.into(),
            ..manifests[src].clone()
        };
        let meta = SampleMeta {
            index: i,
            source: dir_name(&dirs[src]),
            seed: sample_seed(o.config.rng_seed, i),
            layers: s.layers.iter().map(|l| l.record()).collect(),
            permutation: s.permutation,
            occlusion_rate: s.occlusion_rate(),
        };
        let dir = o.out.join(dataset::sample_dir_name(i));
        dataset::write_sample(&dir, &s, &meta, &manifest)?;
        written.push(dir);
    }
    let run = SynthesisRun {
        config: o.config.clone(),
        sources: dirs.iter().map(|d| dir_name(d)).collect(),
        masks: mask_set.iter().map(|m| m.id().to_string()).collect(),
        count: o.count,
    };
    lfdir::write_json(&o.out.join("synthesis.json"), &run)?;
    Ok(written)
}

pub fn parse_mask_shuffle(s: &str) -> Result<MaskShuffle> {
    match s {
        "same" => Ok(MaskShuffle::SameAsLightField),
        "independent" => Ok(MaskShuffle::Independent),
        _ => Err(CliError::Usage(format!(
            "mask shuffle must be `same` or `independent`, got `{s}`"
        ))),
    }
}

// ---- refocus ----

/// Parses `lo:hi:n`.
pub fn parse_sweep(spec: &str) -> Result<Vec<Disparity>> {
    let bad = || CliError::Usage(format!("sweep must be lo:hi:n, got `{spec}`"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        return Err(bad());
    };
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    sweep(lo, hi, n).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn parse_method(s: &str) -> Result<Method> {
    match s {
        "avg" | "average" => Ok(Method::Average),
        "median" => Ok(Method::Median),
        _ => Err(CliError::Usage(format!(
            "method must be `avg` or `median`, got `{s}`"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessEntry {
    pub index: usize,
    pub disparity: f64,
    pub file: String,
    pub sharpness: f64,
    pub holes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessTable {
    pub method: String,
    pub entries: Vec<SharpnessEntry>,
    pub sharpest: usize,
}

pub fn cmd_refocus(
    lf_dir: &Path,
    disparities: &[Disparity],
    method: Method,
    out: &Path,
) -> Result<SharpnessTable> {
    if disparities.is_empty() {
        return Err(CliError::Usage("no refocus disparity given".into()));
    }
    let (lf, _) = lfdir::read_lf(lf_dir)?;
    lfdir::create_dir(out)?;
    let mut entries = Vec::with_capacity(disparities.len());
    for (index, &d) in disparities.iter().enumerate() {
        let r = refocus(&lf, d, method).map_err(|e| CliError::data(lf_dir, e))?;
        let file = format!("refocus_{index:03}.png");
        png::write(&out.join(&file), &r.image)?;
        entries.push(SharpnessEntry {
            index,
            disparity: d.value(),
            file,
            sharpness: sharpness(&r.image, None),
            holes: r.hole_count(),
        });
    }
    let sharpest = entries.iter().enumerate().fold(0, |best, (i, e)| {
        if e.sharpness > entries[best].sharpness {
            i
        } else {
            best
        }
    });
    let table = SharpnessTable {
        method: match method {
            Method::Average => "avg",
            Method::Median => "median",
        }
        .into(),
        entries,
        sharpest,
    };
    lfdir::write_json(&out.join("sharpness.json"), &table)?;
    Ok(table)
}

// ---- train ----

/// Architecture settings a config file may override; the angular grid always
/// comes from the data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkOverrides {
    pub base_depth: Option<usize>,
    pub encoder_levels: Option<usize>,
    pub aspp_rates: Option<Vec<usize>>,
    pub aspp_groups: Option<usize>,
    pub leaky_slope: Option<f64>,
    pub no_aspp: Option<bool>,
    pub drop_outer_skip: Option<bool>,
}

impl NetworkOverrides {
    pub fn apply(&self, rows: usize, cols: usize) -> NetworkConfig {
        let mut c = NetworkConfig::desk(rows, cols);
        if let Some(v) = self.base_depth {
            c.base_depth = v;
        }
        if let Some(v) = self.encoder_levels {
            c.encoder_levels = v;
        }
        if let Some(v) = &self.aspp_rates {
            c.aspp_rates = v.clone();
        }
        if let Some(v) = self.aspp_groups {
            c.aspp_groups = v;
        }
        if let Some(v) = self.leaky_slope {
            c.leaky_slope = v;
        }
        if let Some(v) = self.no_aspp {
            c.no_aspp = v;
        }
        if let Some(v) = self.drop_outer_skip {
            c.drop_outer_skip = v;
        }
        c
    }
}

/// Training config file: `{"network": {...}, "train": {...}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub network: NetworkOverrides,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub data: PathBuf,
    pub out: PathBuf,
    pub config: TrainFile,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub max_steps: Option<u64>,
    pub resume: Option<PathBuf>,
}

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const WEIGHTS_FILE: &str = "weights.docn";
pub const LOG_CSV: &str = "train_log.csv";
pub const LOG_SUMMARY: &str = "train_summary.json";
pub const SUMMARY_WINDOW: usize = 20;

pub fn cmd_train(o: &TrainOptions) -> Result<TrainingLog> {
    let data = dataset::read_samples(&o.data)?;
    let (rows, cols) = (data[0].lf.rows(), data[0].lf.cols());
    let (mut net, state, mut cfg) = match &o.resume {
        Some(path) => {
            let (net, state, cfg) = restore_checkpoint(&weights::read_file(path)?)
                .map_err(|e| CliError::data(path, e))?;
            (net, Some(state), cfg)
        }
        None => {
            let mut cfg = o.config.train.clone();
            if let Some(s) = o.seed {
                cfg.seed = s;
            }
            let net = DeOccNet::build(o.config.network.apply(rows, cols), cfg.seed)?;
            (net, None, cfg)
        }
    };
    if let Some(e) = o.epochs {
        cfg.epochs = e;
    }
    if o.max_steps.is_some() {
        cfg.max_steps = o.max_steps;
    }
    let ckpt_dir = o.out.join(CHECKPOINT_DIR);
    lfdir::create_dir(&ckpt_dir)?;
    let outcome = train::train(&mut net, &data, &cfg, state, |n, s, _, p| {
        let name = match p {
            Progress::EpochDone => format!("epoch_{:04}.ckpt", s.epoch),
            Progress::StepLimit => format!("step_{:08}.ckpt", s.step),
        };
        weights::write_checkpoint(&ckpt_dir.join(name), n, s, &cfg).map_err(|e| match e {
            CliError::Core(c) => c,
            other => deocc_core::Error::Format(other.to_string()),
        })
    })?;
    weights::write_checkpoint(&o.out.join(LAST_CHECKPOINT), &net, &outcome.state, &cfg)?;
    weights::write_weights(&o.out.join(WEIGHTS_FILE), &net)?;
    let csv_path = o.out.join(LOG_CSV);
    std::fs::write(&csv_path, outcome.log.to_csv()).map_err(|e| CliError::io(&csv_path, e))?;
    lfdir::write_json(
        &o.out.join(LOG_SUMMARY),
        &outcome.log.summary(SUMMARY_WINDOW),
    )?;
    Ok(outcome.log)
}

// ---- infer ----

/// Replicates the last row and column until both sides are multiples of `m`.
pub fn pad_edge(t: &Tensor<f32>, m: usize) -> Result<Tensor<f32>> {
    let &[c, h, w] = t.shape() else {
        return Err(deocc_core::Error::InvalidArgument(format!(
            "expected CHW, got {:?}",
            t.shape()
        ))
        .into());
    };
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let src = t.data();
    let mut data = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        for y in 0..ph {
            let row = &src[(ch * h + y.min(h - 1)) * w..][..w];
            data.extend((0..pw).map(|x| row[x.min(w - 1)]));
        }
    }
    Ok(Tensor::from_vec(vec![c, ph, pw], data)?)
}

/// Predicted clean center view of an already rectified light field.
pub fn deocclude(net: &DeOccNet<f32>, lf: &LightField) -> Result<Image> {
    let [rows, cols] = net.config().angular;
    if (lf.rows(), lf.cols()) != (rows, cols) {
        return Err(deocc_core::Error::ConfigMismatch {
            field: "angular".into(),
            expected: format!("{rows}x{cols}"),
            found: format!("{}x{}", lf.rows(), lf.cols()),
        }
        .into());
    }
    let (h, w) = (lf.height(), lf.width());
    let x = pad_edge(&stack_channels(lf), net.config().spatial_multiple())?;
    let (ph, pw) = (x.shape()[1], x.shape()[2]);
    let c = x.shape()[0];
    let y = net.predict(&x.reshape(&[1, c, ph, pw])?)?;
    let full = Image::new(ph, pw, 3, y.into_data())?;
    Ok(full.crop(0, 0, h, w)?)
}

pub fn cmd_infer(
    weights_path: &Path,
    lf_dir: &Path,
    out: &Path,
    rectify_disparity: Option<f64>,
) -> Result<Image> {
    let net = weights::read_net(weights_path)?;
    let (lf, _) = read_rectified(lf_dir, rectify_disparity)?;
    let pred = deocclude(&net, &lf).map_err(|e| match e {
        CliError::Core(c) => CliError::data(lf_dir, c),
        other => other,
    })?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        lfdir::create_dir(parent)?;
    }
    png::write(out, &pred)?;
    Ok(pred)
}

// ---- evaluate ----

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";

fn scene_pairs(pred: &Path, gt: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    if pred.is_file() {
        let scene = pred
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let gt_file = if gt.is_dir() {
            gt.join(dataset::GT_FILE)
        } else {
            gt.to_path_buf()
        };
        return Ok(vec![(scene, pred.to_path_buf(), gt_file)]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(pred)
        .map_err(|e| CliError::io(pred, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!(
            "no predictions found in {}",
            pred.display()
        )));
    }
    files
        .into_iter()
        .map(|p| {
            let scene = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let flat = gt.join(format!("{scene}.png"));
            let nested = gt.join(&scene).join(dataset::GT_FILE);
            let g = if flat.is_file() { flat } else { nested };
            if !g.is_file() {
                return Err(CliError::io(
                    &g,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "no groundtruth for scene"),
                ));
            }
            Ok((scene, p, g))
        })
        .collect()
}

pub fn write_report(out: &Path, report: &EvalReport) -> Result<()> {
    lfdir::create_dir(out)?;
    let csv = out.join(REPORT_CSV);
    std::fs::write(&csv, report.to_csv()).map_err(|e| CliError::io(&csv, e))?;
    lfdir::write_json(&out.join(REPORT_JSON), report)
}

pub fn cmd_evaluate(pred: &Path, gt: &Path, out: &Path) -> Result<EvalReport> {
    let mut rows = Vec::new();
    for (scene, p, g) in scene_pairs(pred, gt)? {
        let a = png::read_rgb(&p)?;
        let b = png::read_rgb(&g)?;
        rows.push(evaluate_scene(scene, &a, &b).map_err(|e| CliError::data(&p, e))?);
    }
    let report = assemble_report(rows)?;
    write_report(out, &report)?;
    Ok(report)
}

// ---- report ----

/// Reads one metric from a report row.
type RowMetric = fn(&deocc_core::metrics::EvalRow) -> f64;

/// Several evaluation reports side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub methods: Vec<(String, EvalReport)>,
}

impl Comparison {
    /// `method,scene,l1,psnr,ssim`, each method's Average row last.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,scene,l1,psnr,ssim\n");
        for (name, rep) in &self.methods {
            for line in rep.to_csv().lines().skip(1) {
                out.push_str(&format!("{name},{line}\n"));
            }
        }
        out
    }

    /// One row per method and metric, one column per scene.
    pub fn to_markdown(&self) -> String {
        let Some((_, first)) = self.methods.first() else {
            return String::new();
        };
        let scenes: Vec<&str> = first
            .rows
            .iter()
            .chain(std::iter::once(&first.average))
            .map(|r| r.scene.as_str())
            .collect();
        let mut out = format!("| metric | method | {} |\n", scenes.join(" | "));
        out.push_str(&format!("|---|---|{}\n", "---|".repeat(scenes.len())));
        let metrics: [(&str, RowMetric, usize); 3] = [
            ("l1", |r| r.l1, 3),
            ("PSNR", |r| r.psnr, 2),
            ("SSIM", |r| r.ssim, 3),
        ];
        for (label, get, digits) in metrics {
            for (name, rep) in &self.methods {
                let cells: Vec<String> = scenes
                    .iter()
                    .map(|s| {
                        rep.rows
                            .iter()
                            .chain(std::iter::once(&rep.average))
                            .find(|r| r.scene == *s)
                            .map_or("-".into(), |r| format!("{:.*}", digits, get(r)))
                    })
                    .collect();
                out.push_str(&format!("| {label} | {name} | {} |\n", cells.join(" | ")));
            }
        }
        out
    }
}

/// Parses `name=path`.
pub fn parse_named(spec: &str) -> Result<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok((n.into(), PathBuf::from(p))),
        _ => Err(CliError::Usage(format!("expected name=path, got `{spec}`"))),
    }
}

pub fn cmd_report(inputs: &[(String, PathBuf)], out: &Path) -> Result<Comparison> {
    if inputs.is_empty() {
        return Err(CliError::Usage("report needs at least one input".into()));
    }
    let mut methods = Vec::with_capacity(inputs.len());
    for (name, path) in inputs {
        let file = if path.is_dir() {
            path.join(REPORT_JSON)
        } else {
            path.clone()
        };
        methods.push((name.clone(), lfdir::read_json::<EvalReport>(&file)?));
    }
    let cmp = Comparison { methods };
    lfdir::create_dir(out)?;
    for (file, text) in [
        ("comparison.csv", cmp.to_csv()),
        ("comparison.md", cmp.to_markdown()),
    ] {
        let p = out.join(file);
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
    }
    lfdir::write_json(&out.join("comparison.json"), &cmp)?;
    Ok(cmp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_specs() {
        assert_eq!(parse_sweep("-1:1:3").unwrap().len(), 3);
        assert!(parse_sweep("1:2").is_err());
        assert!(parse_sweep("a:2:3").is_err());
        assert!(parse_sweep("0:1:0").is_err());
    }

    #[test]
    fn edge_padding() {
        let t = Tensor::from_vec(vec![1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = pad_edge(&t, 4).unwrap();
        assert_eq!(p.shape(), &[1, 4, 4]);
        assert_eq!(&p.data()[..8], &[1.0, 2.0, 3.0, 3.0, 4.0, 5.0, 6.0, 6.0]);
        assert_eq!(&p.data()[12..], &[4.0, 5.0, 6.0, 6.0]);
        assert_eq!(pad_edge(&t, 1).unwrap(), t);
    }

    #[test]
    fn network_overrides_keep_grid() {
        let o = NetworkOverrides {
            base_depth: Some(4),
            no_aspp: Some(true),
            ..Default::default()
        };
        let c = o.apply(5, 15);
        assert_eq!(
            (c.angular, c.in_channels, c.base_depth, c.no_aspp),
            ([5, 15], 225, 4, true)
        );
    }

    #[test]
    fn named_inputs() {
        assert_eq!(
            parse_named("ours=a/b.json").unwrap(),
            ("ours".into(), PathBuf::from("a/b.json"))
        );
        assert!(parse_named("nope").is_err());
    }
}
