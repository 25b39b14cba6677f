//! Synthetic-aperture baselines: shift-and-average refocusing, the per-pixel
//! median variant, focal-stack sweeps and a gradient-based sharpness measure.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::invalid;
use crate::image::{Disparity, Image, LightField};
use crate::lightfield::{shift_all, Shifted};
use crate::Result;

/// A refocused image plus the pixels that had no valid samples (filled with 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Refocused {
    pub image: Image,
    /// Row-major `height x width`; `true` where no view contributed.
    pub holes: Vec<bool>,
}

impl Refocused {
    pub fn hole_count(&self) -> usize {
        self.holes.iter().filter(|&&h| h).count()
    }
}

/// Warps every view so content at disparity `d` lands on its center-view position.
fn align(lf: &LightField, d: Disparity) -> Result<Vec<Shifted>> {
    shift_all(lf, Disparity::new(-d.value())?)
}

/// Validity-weighted average of all views refocused at disparity `d`.
pub fn sa_average(lf: &LightField, d: Disparity) -> Result<Refocused> {
    lf.center()?;
    let (h, w, c) = (lf.height(), lf.width(), lf.channels());
    let hw = h * w;
    let warped = align(lf, d)?;
    let mut weight = vec![0.0f64; hw];
    for s in &warped {
        for (acc, &v) in weight.iter_mut().zip(&s.validity) {
            *acc += v as f64;
        }
    }
    let mut image = Image::zeros(h, w, c);
    for ch in 0..c {
        let mut sum = vec![0.0f64; hw];
        for s in &warped {
            for (acc, &v) in sum.iter_mut().zip(s.image.plane(ch)) {
                *acc += v as f64;
            }
        }
        for (dst, (&s, &wt)) in image.plane_mut(ch).iter_mut().zip(sum.iter().zip(&weight)) {
            *dst = if wt > 0.0 { (s / wt) as f32 } else { 0.0 };
        }
    }
    Ok(Refocused {
        image,
        holes: weight.iter().map(|&wt| wt <= 0.0).collect(),
    })
}

/// Per-pixel, per-channel lower median over views refocused at `d`, using
/// only samples whose validity exceeds 0.5.
pub fn sa_median(lf: &LightField, d: Disparity) -> Result<Refocused> {
    lf.center()?;
    let (h, w, c) = (lf.height(), lf.width(), lf.channels());
    let hw = h * w;
    let warped = align(lf, d)?;
    let mut image = Image::zeros(h, w, c);
    let mut holes = vec![false; hw];
    let mut samples: Vec<f32> = Vec::with_capacity(warped.len());
    for ch in 0..c {
        let planes: Vec<&[f32]> = warped.iter().map(|s| s.image.plane(ch)).collect();
        let out = image.plane_mut(ch);
        for i in 0..hw {
            samples.clear();
            for (s, p) in warped.iter().zip(&planes) {
                if s.validity[i] > 0.5 {
                    // bilinear output is scaled by its validity; undo it for partial support
                    samples.push(p[i] / s.validity[i]);
                }
            }
            if samples.is_empty() {
                holes[i] = true;
                out[i] = 0.0;
                continue;
            }
            samples.sort_unstable_by(|a, b| a.total_cmp(b));
            out[i] = samples[(samples.len() - 1) / 2];
        }
    }
    Ok(Refocused { image, holes })
}

/// Aggregation used by [`refocus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Average,
    Median,
}

pub fn refocus(lf: &LightField, d: Disparity, method: Method) -> Result<Refocused> {
    match method {
        Method::Average => sa_average(lf, d),
        Method::Median => sa_median(lf, d),
    }
}

/// `sa_average` at every disparity in `disparities`.
pub fn focal_stack(lf: &LightField, disparities: &[Disparity]) -> Result<Vec<Image>> {
    if disparities.is_empty() {
        return Err(invalid!("focal stack needs at least one disparity"));
    }
    disparities
        .iter()
        .map(|&d| sa_average(lf, d).map(|r| r.image))
        .collect()
}

/// `n` evenly spaced disparities from `lo` to `hi` inclusive (`n == 1` gives `lo`).
pub fn sweep(lo: f64, hi: f64, n: usize) -> Result<Vec<Disparity>> {
    if n == 0 {
        return Err(invalid!("sweep needs at least one step"));
    }
    if n == 1 {
        return Ok(vec![Disparity::new(lo)?]);
    }
    (0..n)
        .map(|i| Disparity::new(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Mean forward-difference gradient magnitude, averaged over channels and over
/// pixels whose right and lower neighbours exist. With `mask`, only pixels
/// where the mask is set (and both neighbours are set) count. Returns 0 when no
/// pixel qualifies.
pub fn sharpness(img: &Image, mask: Option<&[bool]>) -> f64 {
    let (h, w, c) = img.dims();
    if h < 2 || w < 2 {
        return 0.0;
    }
    let inside = |y: usize, x: usize| mask.is_none_or(|m| m[y * w + x]);
    let mut total = 0.0f64;
    let mut count = 0usize;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            if !(inside(y, x) && inside(y, x + 1) && inside(y + 1, x)) {
                continue;
            }
            let mut g = 0.0;
            for ch in 0..c {
                let v = img.get(ch, y, x) as f64;
                let gx = img.get(ch, y, x + 1) as f64 - v;
                let gy = img.get(ch, y + 1, x) as f64 - v;
                g += libm::sqrt(gx * gx + gy * gy);
            }
            total += g / c as f64;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Index of the sharpest image in a focal stack (first on ties).
pub fn sharpest(stack: &[Image], mask: Option<&[bool]>) -> Option<usize> {
    let scores: Vec<f64> = stack.iter().map(|img| sharpness(img, mask)).collect();
    argmax(&scores)
}

pub(crate) fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}
